//! Rule-based graded reward: an all-or-nothing format gate multiplied by a
//! score reward of 1 for an exact label match, `lambda` for a near miss
//! (distance 1), and 0 for a full miss (distance 2).

use serde::{Deserialize, Serialize};

use crate::tagparse::{
    self, Extraction, Label, ParseFailure, ParsedRound, Round1Output, Round2Output, Variant,
};

/// Reward shaping knobs.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RewardConfig {
    /// Near-miss reward in `[0, 1)`.
    pub lambda: f64,
    /// When set, a score of 1 or 2 paired with a `none` extract also fails
    /// the format gate. Off by default; such trajectories are only linted.
    pub require_extract_consistency: bool,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            lambda: 0.0,
            require_extract_consistency: false,
        }
    }
}

impl RewardConfig {
    pub fn with_lambda(lambda: f64) -> Result<Self, RewardError> {
        validate_lambda(lambda)?;
        Ok(RewardConfig {
            lambda,
            ..RewardConfig::default()
        })
    }

    pub fn validate(&self) -> Result<(), RewardError> {
        validate_lambda(self.lambda)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RewardError {
    #[error("lambda must satisfy 0 <= lambda < 1, got {0}")]
    LambdaOutOfRange(f64),
    #[error("gold label required to compute a reward")]
    MissingGold,
}

fn validate_lambda(lambda: f64) -> Result<(), RewardError> {
    if !(0.0..1.0).contains(&lambda) {
        return Err(RewardError::LambdaOutOfRange(lambda));
    }
    Ok(())
}

/// Decomposed reward: the format indicator, the graded score reward, and
/// their product.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub format_ok: bool,
    /// Graded score reward. Reported even when the format gate fails (for
    /// diagnostics) whenever a score could be parsed; 0 otherwise.
    pub score_reward: f64,
    pub total: f64,
}

/// Graded score reward: 1 on exact match, `lambda` at distance 1, 0 at
/// distance 2. Symmetric in its label arguments.
pub fn score_reward(pred: Label, gold: Label, lambda: f64) -> Result<f64, RewardError> {
    validate_lambda(lambda)?;
    Ok(match pred.distance(gold) {
        0 => 1.0,
        1 => lambda,
        _ => 0.0,
    })
}

/// The all-or-nothing format gate over a full-variant trajectory: both
/// rounds parsed and the extract verbatim in the candidate document.
pub fn format_indicator(
    round1: &Result<Round1Output, ParseFailure>,
    round2: &Result<Round2Output, ParseFailure>,
    candidate_doc: &str,
    config: &RewardConfig,
) -> bool {
    let Ok(r2) = round2 else { return false };
    if round1.is_err() {
        return false;
    }
    if !tagparse::validate_extract(&r2.extract, candidate_doc) {
        return false;
    }
    if config.require_extract_consistency && extract_inconsistent(&r2.extract, r2.score) {
        return false;
    }
    true
}

fn extract_inconsistent(extract: &Extraction, score: Label) -> bool {
    extract.is_none() && score != Label::Irrelevant
}

/// Lint check: a positive score justified by no extract. Not part of the
/// reward unless `require_extract_consistency` is set.
pub fn extract_consistency_lint(round2: &Round2Output) -> bool {
    extract_inconsistent(&round2.extract, round2.score)
}

/// Variant-aware format gate over the unified parse results. `round2` is
/// `None` for the single-round variant, whose only response is `round1`.
pub fn format_indicator_variant(
    round1: &Result<ParsedRound, ParseFailure>,
    round2: Option<&Result<ParsedRound, ParseFailure>>,
    candidate_doc: &str,
    variant: Variant,
    config: &RewardConfig,
) -> bool {
    let Ok(r1) = round1 else { return false };
    let scoring = match (variant.has_round2(), round2) {
        (true, Some(Ok(r2))) => r2,
        (true, _) => return false,
        (false, _) => r1,
    };
    if let Some(extract) = &scoring.extract {
        if !tagparse::validate_extract(extract, candidate_doc) {
            return false;
        }
        if config.require_extract_consistency {
            if let Some(score) = scoring.score {
                if extract_inconsistent(extract, score) {
                    return false;
                }
            }
        }
    }
    scoring.score.is_some()
}

/// Full reward for a trajectory given its raw round outputs. The score
/// reward is computed from the parsed score when available so failed-gate
/// trajectories still report it; the total is gated.
pub fn total_reward(
    round1_raw: &str,
    round2_raw: &str,
    candidate_doc: &str,
    gold: Label,
    config: &RewardConfig,
) -> Result<RewardBreakdown, RewardError> {
    total_reward_variant(
        round1_raw,
        Some(round2_raw),
        candidate_doc,
        gold,
        Variant::Full,
        config,
    )
}

/// Variant-aware [`total_reward`].
pub fn total_reward_variant(
    round1_raw: &str,
    round2_raw: Option<&str>,
    candidate_doc: &str,
    gold: Label,
    variant: Variant,
    config: &RewardConfig,
) -> Result<RewardBreakdown, RewardError> {
    config.validate()?;
    let round1 = tagparse::parse_round1_variant(round1_raw, variant);
    let round2 = match (variant.has_round2(), round2_raw) {
        (true, Some(raw)) => {
            Some(tagparse::parse_round2_variant(raw, variant).expect("variant has round 2"))
        }
        (true, None) => Some(Err(ParseFailure {
            kind: crate::tagparse::FailureKind::MissingTag,
            position: 0,
        })),
        (false, _) => None,
    };
    let format_ok =
        format_indicator_variant(&round1, round2.as_ref(), candidate_doc, variant, config);

    let parsed_score = match (&round2, &round1) {
        (Some(Ok(r2)), _) => r2.score,
        (None, Ok(r1)) => r1.score,
        _ => None,
    };
    let score_reward = match parsed_score {
        Some(pred) => crate::reward::score_reward(pred, gold, config.lambda)?,
        None => 0.0,
    };
    let total = if format_ok { score_reward } else { 0.0 };
    Ok(RewardBreakdown {
        format_ok,
        score_reward,
        total,
    })
}
