//! Toy-policy training loop: snapshot the sampling policy, roll out a batch
//! of groups, score them with the rule-based reward, and take one exact
//! gradient-ascent step on the objective. Plain gradient ascent keeps the
//! finite-difference checks meaningful.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    grpo_gradient, toy_objective_stats, GrpoConfig, GrpoError, PolicySnapshot, ReferencePolicy,
    SnapshotRole, ToyGroup, ToyMember,
};
use crate::policy::toy::{self, feature_bucket, ToyInstance, ToyParams};
use crate::policy::SamplingConfig;
use crate::reward::{self, RewardConfig};
use crate::rollout::QueryDocPair;
use crate::tagparse::Label;

/// How the policy starts: uniform logits, or pre-fit on demonstrations
/// before any reinforcement step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitMode {
    Zero,
    ColdStart,
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub step: usize,
    pub mean_reward: f64,
    pub mean_token_count: f64,
    pub objective: f64,
    pub kl_mean: f64,
}

/// Final parameters and the per-step log.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub log: Vec<TrainRecord>,
    pub params: ToyParams,
}

impl TrainOutcome {
    /// First step whose batch mean reward reaches `threshold`, 1-based.
    pub fn first_step_reaching(&self, threshold: f64) -> Option<usize> {
        self.log
            .iter()
            .find(|r| r.mean_reward >= threshold)
            .map(|r| r.step)
    }
}

/// Supervised pre-fit on demonstrations: for each pair, ascend the log
/// probability of (first intent option, a grounded extract, the gold
/// score). Mirrors annotating the data with a teacher and fitting on it.
pub fn cold_start_fit(
    params: &mut ToyParams,
    dataset: &[QueryDocPair],
    epochs: usize,
    learning_rate: f64,
) -> Result<(), GrpoError> {
    for _ in 0..epochs {
        for pair in dataset {
            let gold = pair
                .gold
                .ok_or_else(|| GrpoError::MissingGold(pair.id.clone()))?;
            let instance = ToyInstance::from_pair(pair);
            let demo = demonstration_choices(&instance, gold);
            let (_, grad) = toy::logprob_and_grad(params, &instance, demo)?;
            params.ascend(&grad, learning_rate);
        }
    }
    Ok(())
}

fn demonstration_choices(instance: &ToyInstance, gold: Label) -> [usize; 3] {
    let extract = if gold == Label::Irrelevant || instance.extract_sentences.is_empty() {
        instance.extract_none_index()
    } else {
        0
    };
    [0, extract, gold.as_u8() as usize]
}

fn mix_seed(seed: u64, step: usize, pair_idx: usize, member: usize) -> u64 {
    // splitmix-style stirring keeps member streams decorrelated.
    let mut z = seed
        .wrapping_add((step as u64).wrapping_mul(0x9e3779b97f4a7c15))
        .wrapping_add((pair_idx as u64).wrapping_mul(0xbf58476d1ce4e5b9))
        .wrapping_add((member as u64).wrapping_mul(0x94d049bb133111eb));
    z ^= z >> 30;
    z = z.wrapping_mul(0xbf58476d1ce4e5b9);
    z ^= z >> 27;
    z
}

#[allow(clippy::too_many_arguments)]
fn rollout_group(
    params: &ToyParams,
    pair: &QueryDocPair,
    config: &GrpoConfig,
    reward_config: &RewardConfig,
    reference: &ToyParams,
    seed: u64,
    step: usize,
    pair_idx: usize,
) -> Result<ToyGroup, GrpoError> {
    let gold = pair
        .gold
        .ok_or_else(|| GrpoError::MissingGold(pair.id.clone()))?;
    let instance = ToyInstance::from_pair(pair);
    let mut members = Vec::with_capacity(config.group_size);
    for k in 0..config.group_size {
        let sampling = SamplingConfig {
            temperature: 1.0,
            seed: mix_seed(seed, step, pair_idx, k),
            max_tokens: 64,
        };
        let sample = toy::sample(params, &instance, &sampling)?;
        let breakdown = reward::total_reward(
            &sample.round1_text,
            &sample.round2_text,
            &pair.candidate,
            gold,
            reward_config,
        )?;
        let logp_ref = toy::logprob(reference, &instance, sample.choices)?;
        members.push(ToyMember {
            choices: sample.choices,
            logp_old: sample.logprobs,
            logp_ref,
            reward: breakdown.total,
        });
    }
    Ok(ToyGroup { instance, members })
}

/// Run the full loop: `steps` iterations of snapshot, rollout, reward,
/// gradient ascent. Deterministic given `(dataset, config, init, seed)`.
pub fn train(
    dataset: &[QueryDocPair],
    config: &GrpoConfig,
    reward_config: &RewardConfig,
    init: InitMode,
    seed: u64,
) -> Result<TrainOutcome, GrpoError> {
    config.validate()?;
    reward_config.validate()?;
    if dataset.is_empty() {
        return Err(GrpoError::InvalidConfig("training dataset is empty".into()));
    }

    let mut params = ToyParams::default();
    if init == InitMode::ColdStart {
        cold_start_fit(&mut params, dataset, 20, 0.5)?;
    }
    let reference = match &config.reference {
        ReferencePolicy::Initial => PolicySnapshot::take(&params, SnapshotRole::Reference),
        ReferencePolicy::FixedFile(path) => {
            PolicySnapshot::take(&ToyParams::load(path)?, SnapshotRole::Reference)
        }
    };

    let mut log = Vec::with_capacity(config.steps);
    for step in 1..=config.steps {
        let theta_old = PolicySnapshot::take(&params, SnapshotRole::Old);
        let mut groups = Vec::with_capacity(config.batch_size);
        for j in 0..config.batch_size {
            let pair_idx = ((step - 1) * config.batch_size + j) % dataset.len();
            groups.push(rollout_group(
                theta_old.params(),
                &dataset[pair_idx],
                config,
                reward_config,
                reference.params(),
                seed,
                step,
                pair_idx,
            )?);
        }

        let stats = toy_objective_stats(&params, &groups, config)?;
        if !stats.objective.is_finite() {
            let rewards: Vec<f64> = groups
                .iter()
                .flat_map(|g| g.members.iter().map(|m| m.reward))
                .collect();
            return Err(GrpoError::NonFiniteObjective {
                step,
                diagnostics: format!(
                    "kl_mean={}, rewards min/max = {:?}/{:?}",
                    stats.kl_mean,
                    rewards.iter().cloned().fold(f64::INFINITY, f64::min),
                    rewards.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
                ),
            });
        }
        if config.learning_rate != 0.0 {
            let gradient = grpo_gradient(&params, &groups, config)?;
            params.ascend(&gradient, config.learning_rate);
        }

        let total_members: usize = groups.iter().map(|g| g.members.len()).sum();
        let mean_reward = groups
            .iter()
            .flat_map(|g| g.members.iter().map(|m| m.reward))
            .sum::<f64>()
            / total_members as f64;
        let mean_token_count = groups
            .iter()
            .flat_map(|g| g.members.iter().map(|m| m.choices.len() as f64))
            .sum::<f64>()
            / total_members as f64;
        log.push(TrainRecord {
            step,
            mean_reward,
            mean_token_count,
            objective: stats.objective,
            kl_mean: stats.kl_mean,
        });
    }
    Ok(TrainOutcome { log, params })
}

/// A labeled synthetic task: the gold label is a deterministic function of
/// the query's feature bucket, so a bucket-conditioned policy can learn it
/// exactly.
pub fn synthetic_dataset(n_pairs: usize, buckets: u32, seed: u64) -> Vec<QueryDocPair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_pairs)
        .map(|i| {
            let salt: u32 = rng.random();
            let query = format!("synthetic topic {i} variant {salt}");
            let gold = Label::try_from((feature_bucket(&query, buckets) % 3) as u8)
                .expect("bucket % 3 is a valid label");
            QueryDocPair {
                id: format!("syn-{i:04}"),
                query: query.clone(),
                aux_docs: vec![format!("background notes on topic {i}")],
                candidate: format!(
                    "Overview of topic {i}. Key detail number {salt}. Closing remark."
                ),
                gold: Some(gold),
            }
        })
        .collect()
}

/// Randomized fixture for gradient verification: groups sampled from a
/// parameter snapshot, the live parameters then perturbed off it so both
/// clip branches are exercised. Groups where a multi-option slot saw only
/// one distinct choice are resampled, since their exactly-cancelling
/// gradient leaves central differences with nothing but rounding noise.
pub fn gradient_check_setup(
    seed: u64,
    n_groups: usize,
    members_per_group: usize,
) -> Result<(crate::policy::toy::ToyParams, Vec<ToyGroup>), GrpoError> {
    use crate::policy::toy::{ParamKey, ToyParams, SLOTS};

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dataset = synthetic_dataset(n_groups, 16, seed);
    let mut theta_old = ToyParams::new(16);
    let mut groups = Vec::with_capacity(n_groups);
    for (g, pair) in dataset.iter().enumerate() {
        let instance = ToyInstance::from_pair(pair);
        let bucket = theta_old.bucket_of(&instance.query);
        for slot in SLOTS {
            for item in 0..instance.vocab_size(slot) {
                theta_old.set_logit(ParamKey { slot, bucket, item }, rng.random_range(-1.0..1.0));
            }
        }
        let mut members = Vec::new();
        for attempt in 0..256u64 {
            members = (0..members_per_group)
                .map(|k| {
                    let sampling = SamplingConfig {
                        temperature: 1.0,
                        seed: mix_seed(seed, g + 1, k, attempt as usize),
                        max_tokens: 16,
                    };
                    let sample = toy::sample(&theta_old, &instance, &sampling)
                        .expect("synthetic instances have non-empty vocabularies");
                    ToyMember {
                        choices: sample.choices,
                        logp_old: sample.logprobs,
                        logp_ref: sample.logprobs,
                        reward: rng.random_range(0.0..1.0),
                    }
                })
                .collect();
            let diverse = (0..3).all(|i| {
                instance.vocab_size(SLOTS[i]) < 2
                    || members
                        .windows(2)
                        .any(|w| w[0].choices[i] != w[1].choices[i])
            });
            if diverse {
                break;
            }
        }
        groups.push(ToyGroup { instance, members });
    }
    let mut params = theta_old;
    let keys: Vec<ParamKey> = {
        let mut set = std::collections::BTreeSet::new();
        for group in &groups {
            let bucket = params.bucket_of(&group.instance.query);
            for slot in SLOTS {
                for item in 0..group.instance.vocab_size(slot) {
                    set.insert(ParamKey { slot, bucket, item });
                }
            }
        }
        set.into_iter().collect()
    };
    for key in keys {
        let delta = if rng.random_range(0.0..1.0) < 0.3 {
            rng.random_range(0.45..0.7) * if rng.random::<bool>() { 1.0 } else { -1.0 }
        } else {
            rng.random_range(-0.04..0.04)
        };
        params.nudge(key, delta);
    }
    Ok((params, groups))
}

/// CSV rendering of a training log (plot-ready).
pub fn train_log_csv(records: &[TrainRecord]) -> String {
    let mut out = String::from("step,mean_reward,mean_token_count,objective,kl_mean\n");
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.step, r.mean_reward, r.mean_token_count, r.objective, r.kl_mean
        ));
    }
    out
}
