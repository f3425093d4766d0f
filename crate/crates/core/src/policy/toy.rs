//! Slot-factored categorical toy policy.
//!
//! A trajectory is three "tokens": an intent choice, an extract choice
//! (one of the candidate document's sentences or the none-sentinel), and a
//! score choice. Each slot is a softmax over per-instance options whose
//! logits are conditioned on a stable hash bucket of the query. Log
//! probabilities and their gradients are closed-form, which makes the whole
//! optimization path checkable against finite differences.

use std::collections::HashMap;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CompletionResult, SamplingConfig, TokenLogprob};
use crate::rollout::QueryDocPair;
use crate::tagparse::{
    render_round1, render_round2, Extraction, Label, Round1Output, Round2Output,
};

/// The three decision slots, in generation order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Slot {
    Intent,
    Extract,
    Score,
}

pub const SLOTS: [Slot; 3] = [Slot::Intent, Slot::Extract, Slot::Score];

/// Number of generated tokens per trajectory: round 1 contributes the
/// intent choice, round 2 the extract and score choices.
pub const TOKENS_PER_TRAJECTORY: usize = 3;

/// One learnable coordinate: the logit of `item` for `slot` in feature
/// bucket `bucket`. Missing coordinates read as 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamKey {
    pub slot: Slot,
    pub bucket: u32,
    pub item: usize,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ToyError {
    #[error("slot {0:?} has an empty vocabulary")]
    EmptySlotVocabulary(Slot),
    #[error("choice {index} out of range for slot {slot:?} (vocabulary size {vocab})")]
    InvalidChoice {
        slot: Slot,
        index: usize,
        vocab: usize,
    },
}

/// Sparse logit table. Cloning snapshots the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyParams {
    table: HashMap<ParamKey, f64>,
    buckets: u32,
}

pub const DEFAULT_BUCKETS: u32 = 64;

impl Default for ToyParams {
    fn default() -> Self {
        ToyParams::new(DEFAULT_BUCKETS)
    }
}

impl ToyParams {
    pub fn new(buckets: u32) -> ToyParams {
        ToyParams {
            table: HashMap::new(),
            buckets: buckets.max(1),
        }
    }

    pub fn buckets(&self) -> u32 {
        self.buckets
    }

    pub fn bucket_of(&self, query: &str) -> u32 {
        feature_bucket(query, self.buckets)
    }

    pub fn logit(&self, key: ParamKey) -> f64 {
        self.table.get(&key).copied().unwrap_or(0.0)
    }

    pub fn set_logit(&mut self, key: ParamKey, value: f64) {
        self.table.insert(key, value);
    }

    pub fn nudge(&mut self, key: ParamKey, delta: f64) {
        *self.table.entry(key).or_insert(0.0) += delta;
    }

    /// Apply a gradient step: `w += learning_rate * grad`.
    pub fn ascend(&mut self, gradient: &HashMap<ParamKey, f64>, learning_rate: f64) {
        for (key, g) in gradient {
            self.nudge(*key, learning_rate * g);
        }
    }

    fn logits(&self, slot: Slot, bucket: u32, vocab: usize) -> Vec<f64> {
        (0..vocab)
            .map(|item| self.logit(ParamKey { slot, bucket, item }))
            .collect()
    }

    /// Deterministic save format: sorted coordinate records.
    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let mut entries: Vec<(ParamKey, f64)> = self.table.iter().map(|(k, v)| (*k, *v)).collect();
        entries.sort_by_key(|e| e.0);
        let file = ParamsFile {
            buckets: self.buckets,
            entries: entries
                .into_iter()
                .map(|(k, weight)| ParamRecord {
                    slot: k.slot,
                    bucket: k.bucket,
                    item: k.item,
                    weight,
                })
                .collect(),
        };
        crate::io::write_json_atomic(path, &file)
    }

    pub fn load(path: &Path) -> std::io::Result<ToyParams> {
        let raw = std::fs::read_to_string(path)?;
        let file: ParamsFile = serde_json::from_str(&raw)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
        let mut params = ToyParams::new(file.buckets);
        for record in file.entries {
            params.set_logit(
                ParamKey {
                    slot: record.slot,
                    bucket: record.bucket,
                    item: record.item,
                },
                record.weight,
            );
        }
        Ok(params)
    }
}

#[derive(Serialize, Deserialize)]
struct ParamsFile {
    buckets: u32,
    entries: Vec<ParamRecord>,
}

#[derive(Serialize, Deserialize)]
struct ParamRecord {
    slot: Slot,
    bucket: u32,
    item: usize,
    weight: f64,
}

/// FNV-1a, pinned here so feature buckets are stable across platforms and
/// releases.
fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

/// Per-instance slot vocabularies derived from a query-document pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyInstance {
    pub pair_id: String,
    pub query: String,
    /// Options for the intent slot; non-empty.
    pub intent_options: Vec<String>,
    /// Sentences of the candidate document; the extract slot's vocabulary
    /// is these plus a final none choice.
    pub extract_sentences: Vec<String>,
    pub candidate: String,
    pub gold: Option<Label>,
}

impl ToyInstance {
    pub fn from_pair(pair: &QueryDocPair) -> ToyInstance {
        let mut intent_options: Vec<String> = pair
            .aux_docs
            .iter()
            .take(4)
            .map(|d| {
                let head: String = d.chars().take(40).collect();
                format!("find content like: {head}")
            })
            .collect();
        if intent_options.is_empty() {
            intent_options.push(format!("find information about {}", pair.query));
        }
        ToyInstance {
            pair_id: pair.id.clone(),
            query: pair.query.clone(),
            intent_options,
            extract_sentences: split_sentences(&pair.candidate, 6),
            candidate: pair.candidate.clone(),
            gold: pair.gold,
        }
    }

    pub fn vocab_size(&self, slot: Slot) -> usize {
        match slot {
            Slot::Intent => self.intent_options.len(),
            Slot::Extract => self.extract_sentences.len() + 1,
            Slot::Score => 3,
        }
    }

    /// Index of the none choice in the extract slot.
    pub fn extract_none_index(&self) -> usize {
        self.extract_sentences.len()
    }

    fn check_vocabs(&self) -> Result<(), ToyError> {
        for slot in SLOTS {
            if self.vocab_size(slot) == 0 {
                return Err(ToyError::EmptySlotVocabulary(slot));
            }
        }
        Ok(())
    }
}

/// Sentence segments of `doc`: contiguous runs between terminators, trimmed
/// of whitespace only, so every segment stays a verbatim substring.
pub fn split_sentences(doc: &str, cap: usize) -> Vec<String> {
    doc.split(['.', '!', '?', '\n'])
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .take(cap)
        .map(str::to_string)
        .collect()
}

const ROUND1_THINK: &str = "inferring the query intent from the provided context";
const ROUND2_THINK: &str = "grounding the score in the candidate document";

/// One sampled trajectory with everything the trainer needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToySample {
    pub choices: [usize; 3],
    /// Log-probabilities of the choices under the distribution actually
    /// sampled from (temperature applied).
    pub logprobs: [f64; 3],
    pub round1_text: String,
    pub round2_text: String,
}

/// Log-softmax of `logits / temperature`; `temperature == 0` degenerates to
/// a point mass on the argmax (lowest index wins ties).
fn log_softmax(logits: &[f64], temperature: f64) -> Vec<f64> {
    if temperature == 0.0 {
        let argmax = argmax_lowest(logits);
        return (0..logits.len())
            .map(|i| if i == argmax { 0.0 } else { f64::NEG_INFINITY })
            .collect();
    }
    let scaled: Vec<f64> = logits.iter().map(|&l| l / temperature).collect();
    let max = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_sum = scaled.iter().map(|&s| (s - max).exp()).sum::<f64>().ln() + max;
    scaled.iter().map(|&s| s - log_sum).collect()
}

fn argmax_lowest(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn sample_index(log_probs: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let draw: f64 = rng.random_range(0.0..1.0);
    let mut cumulative = 0.0;
    for (i, &lp) in log_probs.iter().enumerate() {
        cumulative += lp.exp();
        if draw < cumulative {
            return i;
        }
    }
    log_probs.len() - 1
}

/// Sample one two-round trajectory. Seeded and reproducible; temperature 0
/// is a pure function of `(params, instance)`.
pub fn sample(
    params: &ToyParams,
    instance: &ToyInstance,
    sampling: &SamplingConfig,
) -> Result<ToySample, ToyError> {
    instance.check_vocabs()?;
    let bucket = params.bucket_of(&instance.query);
    let mut rng = ChaCha8Rng::seed_from_u64(sampling.seed);
    let mut choices = [0usize; 3];
    let mut logprobs = [0f64; 3];
    for (i, slot) in SLOTS.into_iter().enumerate() {
        let vocab = instance.vocab_size(slot);
        let logits = params.logits(slot, bucket, vocab);
        let lp = log_softmax(&logits, sampling.temperature);
        let choice = if sampling.temperature == 0.0 {
            argmax_lowest(&logits)
        } else {
            sample_index(&lp, &mut rng)
        };
        choices[i] = choice;
        logprobs[i] = if sampling.temperature == 0.0 {
            0.0
        } else {
            lp[choice]
        };
    }
    Ok(render_sample(instance, choices, logprobs))
}

fn render_sample(instance: &ToyInstance, choices: [usize; 3], logprobs: [f64; 3]) -> ToySample {
    let intent = instance.intent_options[choices[0]].clone();
    let extract = if choices[1] == instance.extract_none_index() {
        Extraction::None
    } else {
        Extraction::Fragment(instance.extract_sentences[choices[1]].clone())
    };
    let score = Label::try_from(choices[2] as u8).expect("score slot vocabulary is 0..3");
    let round1_text = render_round1(&Round1Output {
        think: ROUND1_THINK.into(),
        intent,
    });
    let round2_text = render_round2(&Round2Output {
        think: ROUND2_THINK.into(),
        extract,
        score,
    });
    ToySample {
        choices,
        logprobs,
        round1_text,
        round2_text,
    }
}

/// Spec-shaped sampling entry point: the canonical rendered text with one
/// synthetic token per slot choice.
pub fn toy_sample(
    params: &ToyParams,
    instance: &ToyInstance,
    sampling: &SamplingConfig,
) -> Result<CompletionResult, ToyError> {
    let s = sample(params, instance, sampling)?;
    let tokens = vec![
        TokenLogprob {
            token: format!("intent:{}", s.choices[0]),
            logprob: s.logprobs[0],
        },
        TokenLogprob {
            token: format!("extract:{}", s.choices[1]),
            logprob: s.logprobs[1],
        },
        TokenLogprob {
            token: format!("score:{}", s.choices[2]),
            logprob: s.logprobs[2],
        },
    ];
    Ok(CompletionResult {
        text: format!("{}\n{}", s.round1_text, s.round2_text),
        token_count: tokens.len(),
        token_logprobs: Some(tokens),
    })
}

/// Per-slot log-probabilities of `choices` under the policy (temperature 1)
/// plus the exact gradient of their sum with respect to the logit table:
/// one-hot minus softmax on each touched `(slot, bucket)` vector, zero
/// elsewhere.
pub fn logprob_and_grad(
    params: &ToyParams,
    instance: &ToyInstance,
    choices: [usize; 3],
) -> Result<([f64; 3], HashMap<ParamKey, f64>), ToyError> {
    instance.check_vocabs()?;
    let bucket = params.bucket_of(&instance.query);
    let mut logprobs = [0f64; 3];
    let mut grad = HashMap::new();
    for (i, slot) in SLOTS.into_iter().enumerate() {
        let vocab = instance.vocab_size(slot);
        let choice = choices[i];
        if choice >= vocab {
            return Err(ToyError::InvalidChoice {
                slot,
                index: choice,
                vocab,
            });
        }
        let logits = params.logits(slot, bucket, vocab);
        let lp = log_softmax(&logits, 1.0);
        logprobs[i] = lp[choice];
        for (item, &lp_item) in lp.iter().enumerate() {
            let indicator = if item == choice { 1.0 } else { 0.0 };
            *grad.entry(ParamKey { slot, bucket, item }).or_insert(0.0) +=
                indicator - lp_item.exp();
        }
    }
    Ok((logprobs, grad))
}

/// Per-slot gradient entries of one trajectory's log-probabilities.
pub type SlotGrads = [Vec<(ParamKey, f64)>; 3];

/// Like [`logprob_and_grad`] but with the gradient split per slot, for
/// callers that weight each generated token differently.
pub fn logprob_and_slot_grads(
    params: &ToyParams,
    instance: &ToyInstance,
    choices: [usize; 3],
) -> Result<([f64; 3], SlotGrads), ToyError> {
    instance.check_vocabs()?;
    let bucket = params.bucket_of(&instance.query);
    let mut logprobs = [0f64; 3];
    let mut grads: SlotGrads = [Vec::new(), Vec::new(), Vec::new()];
    for (i, slot) in SLOTS.into_iter().enumerate() {
        let vocab = instance.vocab_size(slot);
        let choice = choices[i];
        if choice >= vocab {
            return Err(ToyError::InvalidChoice {
                slot,
                index: choice,
                vocab,
            });
        }
        let logits = params.logits(slot, bucket, vocab);
        let lp = log_softmax(&logits, 1.0);
        logprobs[i] = lp[choice];
        grads[i] = lp
            .iter()
            .enumerate()
            .map(|(item, &lp_item)| {
                let indicator = if item == choice { 1.0 } else { 0.0 };
                (ParamKey { slot, bucket, item }, indicator - lp_item.exp())
            })
            .collect();
    }
    Ok((logprobs, grads))
}

/// Stable feature bucket of a query string.
pub fn feature_bucket(query: &str, buckets: u32) -> u32 {
    (fnv1a64(query.as_bytes()) % buckets.max(1) as u64) as u32
}

/// Log-probabilities only (used when re-evaluating stored choices under
/// perturbed parameters).
pub fn logprob(
    params: &ToyParams,
    instance: &ToyInstance,
    choices: [usize; 3],
) -> Result<[f64; 3], ToyError> {
    instance.check_vocabs()?;
    let bucket = params.bucket_of(&instance.query);
    let mut logprobs = [0f64; 3];
    for (i, slot) in SLOTS.into_iter().enumerate() {
        let vocab = instance.vocab_size(slot);
        let choice = choices[i];
        if choice >= vocab {
            return Err(ToyError::InvalidChoice {
                slot,
                index: choice,
                vocab,
            });
        }
        let logits = params.logits(slot, bucket, vocab);
        logprobs[i] = log_softmax(&logits, 1.0)[choice];
    }
    Ok(logprobs)
}
