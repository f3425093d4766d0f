//! Two-round interaction orchestration: render the intent prompt with the
//! auxiliary documents, obtain the intent, render the scoring prompt with
//! the candidate document, obtain extract and score, and assemble the
//! trajectory with its reward.
//!
//! Parsing failures never abort a rollout: the trajectory records them and
//! the format gate zeroes the reward, which is exactly the signal the
//! optimizer trains on. Only transport-level failures mark a trajectory
//! failed.

pub mod prompts;

use futures::future::join_all;
use serde::{Deserialize, Serialize};

use crate::policy::{CompletionBackend, CompletionResult, Message, SamplingConfig};
use crate::reward::{self, RewardBreakdown, RewardConfig};
use crate::tagparse::{self, Extraction, Label, Variant};

/// A query, its auxiliary in-platform documents, the candidate document
/// under assessment, and an optional gold label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryDocPair {
    pub id: String,
    pub query: String,
    #[serde(default)]
    pub aux_docs: Vec<String>,
    pub candidate: String,
    #[serde(default)]
    pub gold: Option<Label>,
}

/// Semantically meaningful fields recovered from the raw round outputs;
/// each is `None` when its round failed to parse or the active variant has
/// no such field.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ParsedFields {
    pub intent: Option<String>,
    pub extract: Option<Extraction>,
    pub score: Option<Label>,
}

/// One complete rollout record. Serialized as a single JSON Lines record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub pair_id: String,
    pub seed: u64,
    pub round1_raw: Option<String>,
    pub round2_raw: Option<String>,
    pub parsed: ParsedFields,
    /// Per-token log-probabilities under the sampling policy, round 1 then
    /// round 2; absent when the backend does not return them.
    pub token_logprobs_old: Option<Vec<f64>>,
    pub token_count: usize,
    /// Present when the pair carries a gold label and both rounds returned.
    pub reward: Option<RewardBreakdown>,
    pub error: Option<String>,
}

impl Trajectory {
    pub fn failed(&self) -> bool {
        self.error.is_some()
    }
}

/// The trajectories sampled for one pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRollout {
    pub pair_id: String,
    pub trajectories: Vec<Trajectory>,
    /// False when more than half the trajectories failed at transport
    /// level.
    pub usable: bool,
}

/// Rollout-time switches: the interaction-format variant and the
/// retrieval-input ablation.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct RolloutOptions {
    pub variant: Variant,
    /// Hide the auxiliary documents from the round-1 prompt.
    pub drop_aux_docs: bool,
    pub reward: RewardConfig,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RolloutError {
    #[error("group size must be >= 2, got {0}")]
    GroupTooSmall(usize),
    #[error("expected {expected} sampling seeds, got {got}")]
    SeedCountMismatch { expected: usize, got: usize },
    #[error("pair {0} has an empty query")]
    EmptyQuery(String),
}

fn concat_logprobs(r1: &CompletionResult, r2: &CompletionResult) -> Option<Vec<f64>> {
    match (&r1.token_logprobs, &r2.token_logprobs) {
        (Some(a), Some(b)) => Some(a.iter().chain(b.iter()).map(|t| t.logprob).collect()),
        _ => None,
    }
}

/// Execute one rollout for `pair`: round 1, then round 2 with the raw
/// assistant reply spliced into the conversation regardless of whether it
/// parsed.
pub async fn run_trajectory(
    pair: &QueryDocPair,
    backend: &dyn CompletionBackend,
    sampling: &SamplingConfig,
    options: &RolloutOptions,
) -> Result<Trajectory, RolloutError> {
    if pair.query.trim().is_empty() {
        return Err(RolloutError::EmptyQuery(pair.id.clone()));
    }
    let aux: &[String] = if options.drop_aux_docs {
        &[]
    } else {
        &pair.aux_docs
    };
    let mut trajectory = Trajectory {
        pair_id: pair.id.clone(),
        seed: sampling.seed,
        round1_raw: None,
        round2_raw: None,
        parsed: ParsedFields::default(),
        token_logprobs_old: None,
        token_count: 0,
        reward: None,
        error: None,
    };

    if options.variant == Variant::SingleRound {
        let messages = prompts::render_single_round_prompt(&pair.query, aux, &pair.candidate);
        let result = match backend.complete(&messages, sampling).await {
            Ok(r) => r,
            Err(e) => {
                trajectory.error = Some(e.to_string());
                return Ok(trajectory);
            }
        };
        trajectory.token_logprobs_old = result
            .token_logprobs
            .as_ref()
            .map(|lps| lps.iter().map(|t| t.logprob).collect());
        trajectory.token_count = result.token_count;
        let parsed = tagparse::parse_round1_variant(&result.text, options.variant);
        if let Ok(round) = &parsed {
            trajectory.parsed.intent = round.intent.clone();
            trajectory.parsed.extract = round.extract.clone();
            trajectory.parsed.score = round.score;
        }
        trajectory.round1_raw = Some(result.text);
        finalize_reward(&mut trajectory, pair, options);
        return Ok(trajectory);
    }

    let round1_messages = prompts::render_round1_prompt_variant(&pair.query, aux, options.variant);
    let round1 = match backend.complete(&round1_messages, sampling).await {
        Ok(r) => r,
        Err(e) => {
            trajectory.error = Some(format!("round 1: {e}"));
            return Ok(trajectory);
        }
    };
    if let Ok(round) = tagparse::parse_round1_variant(&round1.text, options.variant) {
        trajectory.parsed.intent = round.intent.clone();
    }

    let mut conversation = round1_messages;
    conversation.push(Message::assistant(round1.text.clone()));
    let round2_messages =
        prompts::render_round2_messages_variant(&conversation, &pair.candidate, options.variant);
    trajectory.round1_raw = Some(round1.text.clone());

    let round2 = match backend.complete(&round2_messages, sampling).await {
        Ok(r) => r,
        Err(e) => {
            trajectory.token_count = round1.token_count;
            trajectory.error = Some(format!("round 2: {e}"));
            return Ok(trajectory);
        }
    };
    if let Some(Ok(round)) = tagparse::parse_round2_variant(&round2.text, options.variant) {
        trajectory.parsed.extract = round.extract.clone();
        trajectory.parsed.score = round.score;
    }
    trajectory.token_logprobs_old = concat_logprobs(&round1, &round2);
    trajectory.token_count = round1.token_count + round2.token_count;
    trajectory.round2_raw = Some(round2.text);
    finalize_reward(&mut trajectory, pair, options);
    Ok(trajectory)
}

fn finalize_reward(trajectory: &mut Trajectory, pair: &QueryDocPair, options: &RolloutOptions) {
    let Some(gold) = pair.gold else { return };
    let Some(round1_raw) = &trajectory.round1_raw else {
        return;
    };
    match reward::total_reward_variant(
        round1_raw,
        trajectory.round2_raw.as_deref(),
        &pair.candidate,
        gold,
        options.variant,
        &options.reward,
    ) {
        Ok(breakdown) => trajectory.reward = Some(breakdown),
        Err(e) => trajectory.error = Some(format!("reward: {e}")),
    }
}

/// Recompute the reward of a persisted trajectory from its raw texts. Used
/// by the audit path; must reproduce the stored breakdown bit-for-bit.
pub fn recompute_reward(
    trajectory: &Trajectory,
    pair: &QueryDocPair,
    options: &RolloutOptions,
) -> Option<RewardBreakdown> {
    let gold = pair.gold?;
    let round1_raw = trajectory.round1_raw.as_deref()?;
    reward::total_reward_variant(
        round1_raw,
        trajectory.round2_raw.as_deref(),
        &pair.candidate,
        gold,
        options.variant,
        &options.reward,
    )
    .ok()
}

/// Sample `seeds.len()` independent trajectories for one pair. Results are
/// ordered by seed; the group is unusable when more than half failed at
/// transport level.
pub async fn run_group(
    pair: &QueryDocPair,
    backend: &dyn CompletionBackend,
    group_size: usize,
    seeds: &[u64],
    options: &RolloutOptions,
) -> Result<GroupRollout, RolloutError> {
    if group_size < 2 {
        return Err(RolloutError::GroupTooSmall(group_size));
    }
    if seeds.len() != group_size {
        return Err(RolloutError::SeedCountMismatch {
            expected: group_size,
            got: seeds.len(),
        });
    }
    let futures = seeds.iter().map(|&seed| {
        let sampling = SamplingConfig::with_seed(seed);
        async move { run_trajectory(pair, backend, &sampling, options).await }
    });
    let mut trajectories = join_all(futures)
        .await
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    trajectories.sort_by_key(|t| t.seed);
    let failed = trajectories.iter().filter(|t| t.failed()).count();
    let usable = failed * 2 <= trajectories.len();
    Ok(GroupRollout {
        pair_id: pair.id.clone(),
        trajectories,
        usable,
    })
}

/// Consecutive seeds starting at `base_seed`, one per group member.
pub fn seed_range(base_seed: u64, group_size: usize) -> Vec<u64> {
    (0..group_size as u64)
        .map(|i| base_seed.wrapping_add(i))
        .collect()
}
