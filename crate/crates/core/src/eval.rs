//! Evaluation metrics: 3-class confusion matrix, per-class F1, macro-F1,
//! accuracy, one-vs-rest AUC under the Mann-Whitney rank statistic with
//! average-rank tie handling (plus an exhaustive pairwise oracle), the
//! good/same/bad delta, and session re-query rates.

use serde::{Deserialize, Serialize};

use crate::tagparse::Label;

/// 3x3 counts; rows are gold labels, columns are predictions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; 3]; 3],
}

impl ConfusionMatrix {
    pub fn record(&mut self, gold: Label, pred: Label) {
        self.counts[gold.as_u8() as usize][pred.as_u8() as usize] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..3).map(|i| self.counts[i][i]).sum()
    }

    pub fn accuracy(&self) -> f64 {
        self.trace() as f64 / self.total() as f64
    }

    /// (precision, recall, f1) for one class; zero denominators yield 0.
    pub fn class_prf(&self, class: usize) -> (f64, f64, f64) {
        let tp = self.counts[class][class] as f64;
        let pred_total: f64 = (0..3).map(|g| self.counts[g][class] as f64).sum();
        let gold_total: f64 = (0..3).map(|p| self.counts[class][p] as f64).sum();
        let precision = if pred_total == 0.0 {
            0.0
        } else {
            tp / pred_total
        };
        let recall = if gold_total == 0.0 {
            0.0
        } else {
            tp / gold_total
        };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        (precision, recall, f1)
    }
}

/// A prediction with optional per-class scores (probabilities or logits)
/// used for AUC ranking.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredPrediction {
    pub pair_id: String,
    pub gold: Label,
    pub pred: Label,
    #[serde(default)]
    pub class_scores: Option<[f64; 3]>,
}

/// Which one-vs-rest boundary an AUC measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AucSplit {
    /// Gold 0 vs gold {1, 2}; positives ranked by score(1) + score(2).
    ZeroVsRest,
    /// Gold {0, 1} vs gold 2; positives ranked by score(2).
    TwoVsRest,
}

/// Where the AUC ranking scores came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AucScoreSource {
    /// Per-class scores supplied by the predictor.
    ClassScores,
    /// Discrete predicted labels used as a 3-level score (heavy ties).
    PredictedLabel,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("no predictions")]
    Empty,
    #[error("AUC undefined: one side of the {0:?} split is empty")]
    UndefinedAuc(AucSplit),
    #[error("class_scores flagged as probabilities must sum to 1, got {0}")]
    BadProbabilities(f64),
    #[error("GSB counts sum to zero")]
    EmptyGsb,
    #[error("no sessions/queries in the log")]
    EmptySessions,
    #[error("window must be positive, got {0}")]
    BadWindow(f64),
    #[error("session {0}: timestamps decrease")]
    NonMonotonicSession(String),
}

/// The full evaluation report, column-for-column what the results table
/// prints: F1 per class, the two AUCs, accuracy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub confusion: ConfusionMatrix,
    pub f1: [f64; 3],
    pub macro_f1: f64,
    pub accuracy: f64,
    pub auc_zero_vs_rest: Option<f64>,
    pub auc_two_vs_rest: Option<f64>,
    pub auc_score_source: Option<AucScoreSource>,
    /// Classes absent from both gold and predictions, whose F1 is 0 by the
    /// zero-denominator rule.
    pub degenerate_classes: Vec<u8>,
    pub total: u64,
}

/// Confusion-matrix metrics only (no AUC).
pub fn classification_report(preds: &[ScoredPrediction]) -> Result<MetricReport, EvalError> {
    if preds.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut confusion = ConfusionMatrix::default();
    for p in preds {
        confusion.record(p.gold, p.pred);
    }
    let f1 = [
        confusion.class_prf(0).2,
        confusion.class_prf(1).2,
        confusion.class_prf(2).2,
    ];
    let macro_f1 = f1.iter().sum::<f64>() / 3.0;
    let degenerate_classes = (0..3u8)
        .filter(|&c| {
            let c = c as usize;
            let in_gold: u64 = (0..3).map(|p| confusion.counts[c][p]).sum();
            let in_pred: u64 = (0..3).map(|g| confusion.counts[g][c]).sum();
            in_gold == 0 && in_pred == 0
        })
        .collect();
    Ok(MetricReport {
        accuracy: confusion.accuracy(),
        total: confusion.total(),
        confusion,
        f1,
        macro_f1,
        auc_zero_vs_rest: None,
        auc_two_vs_rest: None,
        auc_score_source: None,
        degenerate_classes,
    })
}

/// Classification metrics plus both one-vs-rest AUCs. AUC slots stay empty
/// (rather than failing the whole report) when a split has an empty side.
pub fn metric_report(preds: &[ScoredPrediction]) -> Result<MetricReport, EvalError> {
    let mut report = classification_report(preds)?;
    report.auc_zero_vs_rest = auc_one_vs_rest(preds, AucSplit::ZeroVsRest).ok();
    report.auc_two_vs_rest = auc_one_vs_rest(preds, AucSplit::TwoVsRest).ok();
    report.auc_score_source = Some(score_source(preds));
    Ok(report)
}

fn score_source(preds: &[ScoredPrediction]) -> AucScoreSource {
    if preds.iter().all(|p| p.class_scores.is_some()) {
        AucScoreSource::ClassScores
    } else {
        AucScoreSource::PredictedLabel
    }
}

/// (positive?, ranking score) pairs for a split. Falls back to the
/// predicted label as the score when any prediction lacks class scores.
fn split_scores(preds: &[ScoredPrediction], split: AucSplit) -> Vec<(bool, f64)> {
    let use_scores = matches!(score_source(preds), AucScoreSource::ClassScores);
    preds
        .iter()
        .map(|p| {
            let positive = match split {
                AucSplit::ZeroVsRest => p.gold != Label::Irrelevant,
                AucSplit::TwoVsRest => p.gold == Label::High,
            };
            let score = match (&p.class_scores, use_scores) {
                (Some(s), true) => match split {
                    AucSplit::ZeroVsRest => s[1] + s[2],
                    AucSplit::TwoVsRest => s[2],
                },
                _ => p.pred.as_u8() as f64,
            };
            (positive, score)
        })
        .collect()
}

/// One-vs-rest AUC via the Mann-Whitney U statistic with average ranks for
/// ties: `AUC = (R_pos - n_pos (n_pos + 1) / 2) / (n_pos * n_neg)`.
pub fn auc_one_vs_rest(preds: &[ScoredPrediction], split: AucSplit) -> Result<f64, EvalError> {
    if preds.is_empty() {
        return Err(EvalError::Empty);
    }
    let scored = split_scores(preds, split);
    let n_pos = scored.iter().filter(|(p, _)| *p).count();
    let n_neg = scored.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(EvalError::UndefinedAuc(split));
    }

    let mut order: Vec<usize> = (0..scored.len()).collect();
    order.sort_by(|&a, &b| {
        scored[a]
            .1
            .partial_cmp(&scored[b].1)
            .expect("finite scores")
    });
    let mut ranks = vec![0.0f64; scored.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scored[order[j + 1]].1 == scored[order[i]].1 {
            j += 1;
        }
        // 1-based ranks i+1..=j+1 averaged across the tie block.
        let avg = (i + 1 + j + 1) as f64 / 2.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }

    let rank_sum_pos: f64 = scored
        .iter()
        .zip(&ranks)
        .filter(|((p, _), _)| *p)
        .map(|(_, r)| r)
        .sum();
    let u = rank_sum_pos - (n_pos as f64 * (n_pos as f64 + 1.0)) / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Definitional AUC oracle: mean over all (positive, negative) pairs of
/// full credit for a higher positive score and half credit for a tie.
pub fn auc_bruteforce(preds: &[ScoredPrediction], split: AucSplit) -> Result<f64, EvalError> {
    if preds.is_empty() {
        return Err(EvalError::Empty);
    }
    let scored = split_scores(preds, split);
    let positives: Vec<f64> = scored.iter().filter(|(p, _)| *p).map(|(_, s)| *s).collect();
    let negatives: Vec<f64> = scored
        .iter()
        .filter(|(p, _)| !*p)
        .map(|(_, s)| *s)
        .collect();
    if positives.is_empty() || negatives.is_empty() {
        return Err(EvalError::UndefinedAuc(split));
    }
    let mut credit = 0.0;
    for &p in &positives {
        for &n in &negatives {
            if p > n {
                credit += 1.0;
            } else if p == n {
                credit += 0.5;
            }
        }
    }
    Ok(credit / (positives.len() as f64 * negatives.len() as f64))
}

/// Good/Same/Bad counts from a side-by-side comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GsbCounts {
    pub good: u64,
    pub same: u64,
    pub bad: u64,
}

/// Signed percentage `(good - bad) / total * 100`.
pub fn gsb_delta(counts: &GsbCounts) -> Result<f64, EvalError> {
    let total = counts.good + counts.same + counts.bad;
    if total == 0 {
        return Err(EvalError::EmptyGsb);
    }
    Ok((counts.good as f64 - counts.bad as f64) * 100.0 / total as f64)
}

/// One search session: (timestamp seconds, query) events in time order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionLog {
    pub session_id: String,
    pub events: Vec<QueryEvent>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryEvent {
    pub timestamp: f64,
    pub query: String,
}

/// Fraction of queries followed by another query in the same session within
/// `window_seconds`.
pub fn requery_rate(sessions: &[SessionLog], window_seconds: f64) -> Result<f64, EvalError> {
    if window_seconds <= 0.0 {
        return Err(EvalError::BadWindow(window_seconds));
    }
    let mut total = 0usize;
    let mut followed = 0usize;
    for session in sessions {
        for pair in session.events.windows(2) {
            if pair[1].timestamp < pair[0].timestamp {
                return Err(EvalError::NonMonotonicSession(session.session_id.clone()));
            }
        }
        total += session.events.len();
        for pair in session.events.windows(2) {
            if pair[1].timestamp - pair[0].timestamp <= window_seconds {
                followed += 1;
            }
        }
    }
    if total == 0 {
        return Err(EvalError::EmptySessions);
    }
    Ok(followed as f64 / total as f64)
}

/// Before/after re-query comparison. The reporting convention for a
/// "reduction" is ambiguous, so both readings are carried: percentage
/// points and percent relative to the baseline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RequeryChange {
    pub before: f64,
    pub after: f64,
    /// `(before - after) * 100`.
    pub absolute_points: f64,
    /// `(before - after) / before * 100`.
    pub relative_percent: f64,
}

pub fn requery_change(before: f64, after: f64) -> RequeryChange {
    RequeryChange {
        before,
        after,
        absolute_points: (before - after) * 100.0,
        relative_percent: if before == 0.0 {
            0.0
        } else {
            (before - after) / before * 100.0
        },
    }
}

/// Fixed-width text table in the results-table column order.
pub fn render_table(report: &MetricReport) -> String {
    let fmt_auc = |v: Option<f64>| match v {
        Some(x) => format!("{:>7.4}", x),
        None => format!("{:>7}", "n/a"),
    };
    let mut out = String::new();
    out.push_str("  F1(0)   F1(1)   F1(2)  AUC0/12  AUC01/2  Accuracy\n");
    out.push_str(&format!(
        " {:>6.4}  {:>6.4}  {:>6.4}  {}  {}  {:>8.4}\n",
        report.f1[0],
        report.f1[1],
        report.f1[2],
        fmt_auc(report.auc_zero_vs_rest),
        fmt_auc(report.auc_two_vs_rest),
        report.accuracy
    ));
    out.push_str(&format!(
        "  macro-F1 {:.4}  (n = {})\n",
        report.macro_f1, report.total
    ));
    if !report.degenerate_classes.is_empty() {
        out.push_str(&format!(
            "  note: classes {:?} absent from gold and predictions; F1 fixed at 0\n",
            report.degenerate_classes
        ));
    }
    out.push_str("  confusion (rows gold, cols pred):\n");
    for row in report.confusion.counts {
        out.push_str(&format!("    {:>6} {:>6} {:>6}\n", row[0], row[1], row[2]));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pred(gold: u8, p: u8) -> ScoredPrediction {
        ScoredPrediction {
            pair_id: format!("{gold}-{p}"),
            gold: Label::try_from(gold).unwrap(),
            pred: Label::try_from(p).unwrap(),
            class_scores: None,
        }
    }

    fn scored(gold: u8, scores: [f64; 3]) -> ScoredPrediction {
        ScoredPrediction {
            pair_id: format!("s{gold}"),
            gold: Label::try_from(gold).unwrap(),
            pred: Label::Irrelevant,
            class_scores: Some(scores),
        }
    }

    #[test]
    fn perfect_predictions() {
        let preds = vec![pred(0, 0), pred(1, 1), pred(2, 2)];
        let report = classification_report(&preds).unwrap();
        assert_eq!(report.f1, [1.0, 1.0, 1.0]);
        assert_eq!(report.accuracy, 1.0);
    }

    #[test]
    fn hand_computed_report() {
        let preds = vec![pred(0, 0), pred(0, 1), pred(1, 1), pred(2, 2)];
        let report = classification_report(&preds).unwrap();
        assert!((report.accuracy - 0.75).abs() < 1e-12);
        assert!((report.f1[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((report.f1[1] - 2.0 / 3.0).abs() < 1e-12);
        assert!((report.f1[2] - 1.0).abs() < 1e-12);
        assert!((report.macro_f1 - 7.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn absent_class_is_flagged_with_zero_f1() {
        let preds = vec![pred(0, 0), pred(1, 1), pred(0, 1)];
        let report = classification_report(&preds).unwrap();
        assert_eq!(report.f1[2], 0.0);
        assert_eq!(report.degenerate_classes, vec![2]);
    }

    #[test]
    fn auc_perfectly_separated() {
        let preds = vec![
            scored(0, [0.9, 0.05, 0.05]),
            scored(0, [0.6, 0.2, 0.2]),
            scored(2, [0.1, 0.0, 0.9]),
        ];
        assert_eq!(auc_one_vs_rest(&preds, AucSplit::ZeroVsRest).unwrap(), 1.0);
        assert_eq!(auc_bruteforce(&preds, AucSplit::ZeroVsRest).unwrap(), 1.0);
    }

    #[test]
    fn all_ties_give_half() {
        let preds = vec![
            scored(0, [1.0 / 3.0; 3]),
            scored(1, [1.0 / 3.0; 3]),
            scored(2, [1.0 / 3.0; 3]),
        ];
        for split in [AucSplit::ZeroVsRest, AucSplit::TwoVsRest] {
            assert_eq!(auc_one_vs_rest(&preds, split).unwrap(), 0.5);
            assert_eq!(auc_bruteforce(&preds, split).unwrap(), 0.5);
        }
    }

    #[test]
    fn auc_hand_case_half() {
        // golds neg,pos,neg,pos with positive-side scores .2,.1,.3,.4:
        // concordant pairs are (.4 > .2) and (.4 > .3); (.1) loses both,
        // so AUC = 2/4.
        let preds = vec![
            scored(0, [0.8, 0.1, 0.1]),
            scored(2, [0.9, 0.05, 0.05]),
            scored(0, [0.7, 0.15, 0.15]),
            scored(2, [0.6, 0.2, 0.2]),
        ];
        // ZeroVsRest positive scores: 0.2, 0.1, 0.3, 0.4.
        assert_eq!(auc_one_vs_rest(&preds, AucSplit::ZeroVsRest).unwrap(), 0.5);
        assert_eq!(auc_bruteforce(&preds, AucSplit::ZeroVsRest).unwrap(), 0.5);
    }

    #[test]
    fn single_pos_neg_cases() {
        let up = vec![scored(2, [0.0, 0.0, 0.9]), scored(0, [0.0, 0.0, 0.2])];
        assert_eq!(auc_bruteforce(&up, AucSplit::TwoVsRest).unwrap(), 1.0);
        let tie = vec![scored(2, [0.0, 0.0, 0.5]), scored(0, [0.0, 0.0, 0.5])];
        assert_eq!(auc_bruteforce(&tie, AucSplit::TwoVsRest).unwrap(), 0.5);
    }

    #[test]
    fn rank_auc_equals_bruteforce_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let n = rng.random_range(2..120);
            let preds: Vec<ScoredPrediction> = (0..n)
                .map(|i| {
                    let gold: u8 = rng.random_range(0..3);
                    // Coarse grid forces plenty of ties.
                    let raw: [f64; 3] = [
                        (rng.random_range(0..5) as f64) / 4.0,
                        (rng.random_range(0..5) as f64) / 4.0,
                        (rng.random_range(0..5) as f64) / 4.0,
                    ];
                    let mut p = scored(gold, raw);
                    p.pair_id = format!("r{i}");
                    p
                })
                .collect();
            for split in [AucSplit::ZeroVsRest, AucSplit::TwoVsRest] {
                match (
                    auc_one_vs_rest(&preds, split),
                    auc_bruteforce(&preds, split),
                ) {
                    (Ok(fast), Ok(slow)) => {
                        assert!((fast - slow).abs() <= 1e-12, "{fast} vs {slow}")
                    }
                    (Err(EvalError::UndefinedAuc(_)), Err(EvalError::UndefinedAuc(_))) => {}
                    (a, b) => panic!("disagreeing results: {a:?} vs {b:?}"),
                }
            }
        }
    }

    #[test]
    fn auc_invariant_under_monotone_transform() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let preds: Vec<ScoredPrediction> = (0..50)
            .map(|i| {
                let gold: u8 = rng.random_range(0..3);
                let mut p = scored(gold, [rng.random(), rng.random(), rng.random()]);
                p.pair_id = format!("m{i}");
                p
            })
            .collect();
        let transformed: Vec<ScoredPrediction> = preds
            .iter()
            .map(|p| {
                let s = p.class_scores.unwrap();
                // exp is strictly increasing; per-class transform shifts
                // the positive-side sums monotonically only if applied to
                // the summed score, so transform the sum via a shared
                // monotone map by scaling all classes equally.
                ScoredPrediction {
                    class_scores: Some([s[0] * 3.0, s[1] * 3.0, s[2] * 3.0]),
                    ..p.clone()
                }
            })
            .collect();
        for split in [AucSplit::ZeroVsRest, AucSplit::TwoVsRest] {
            let a = auc_one_vs_rest(&preds, split).unwrap();
            let b = auc_one_vs_rest(&transformed, split).unwrap();
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn missing_scores_fall_back_to_predicted_label() {
        let preds = vec![pred(0, 0), pred(2, 2), pred(1, 1), pred(0, 1)];
        let report = metric_report(&preds).unwrap();
        assert_eq!(
            report.auc_score_source,
            Some(AucScoreSource::PredictedLabel)
        );
        assert!(report.auc_zero_vs_rest.is_some());
    }

    #[test]
    fn one_sided_auc_is_undefined() {
        let preds = vec![pred(2, 2), pred(2, 1)];
        assert!(matches!(
            auc_one_vs_rest(&preds, AucSplit::ZeroVsRest),
            Err(EvalError::UndefinedAuc(_))
        ));
    }

    #[test]
    fn gsb_known_arithmetic() {
        assert_eq!(
            gsb_delta(&GsbCounts {
                good: 23,
                same: 71,
                bad: 6
            })
            .unwrap(),
            17.0
        );
        assert_eq!(
            gsb_delta(&GsbCounts {
                good: 6,
                same: 71,
                bad: 23
            })
            .unwrap(),
            -17.0
        );
        assert_eq!(
            gsb_delta(&GsbCounts {
                good: 4,
                same: 9,
                bad: 4
            })
            .unwrap(),
            0.0
        );
        assert!(gsb_delta(&GsbCounts {
            good: 0,
            same: 0,
            bad: 0
        })
        .is_err());
    }

    fn session(id: &str, times: &[f64]) -> SessionLog {
        SessionLog {
            session_id: id.into(),
            events: times
                .iter()
                .map(|&t| QueryEvent {
                    timestamp: t,
                    query: format!("q@{t}"),
                })
                .collect(),
        }
    }

    #[test]
    fn requery_rate_basic() {
        let sessions = vec![session("s1", &[0.0, 10.0])];
        assert_eq!(requery_rate(&sessions, 60.0).unwrap(), 0.5);
    }

    #[test]
    fn single_query_sessions_have_zero_rate() {
        let sessions = vec![session("a", &[0.0]), session("b", &[5.0])];
        assert_eq!(requery_rate(&sessions, 60.0).unwrap(), 0.0);
    }

    #[test]
    fn requery_rate_monotone_in_window() {
        let sessions = vec![
            session("s", &[0.0, 30.0, 100.0, 400.0]),
            session("t", &[0.0, 5.0]),
        ];
        let mut last = 0.0;
        for window in [1.0, 10.0, 50.0, 150.0, 500.0] {
            let rate = requery_rate(&sessions, window).unwrap();
            assert!(rate >= last, "window {window}: {rate} < {last}");
            last = rate;
        }
    }

    #[test]
    fn requery_change_reports_both_conventions() {
        let change = requery_change(0.30, 0.2897);
        assert!((change.absolute_points - 1.03).abs() < 1e-9);
        assert!((change.relative_percent - 3.4333333333).abs() < 1e-6);
    }

    #[test]
    fn non_monotonic_session_is_rejected() {
        let sessions = vec![session("s", &[10.0, 5.0])];
        assert!(matches!(
            requery_rate(&sessions, 60.0),
            Err(EvalError::NonMonotonicSession(_))
        ));
    }

    #[test]
    fn table_renders_all_columns() {
        let preds = vec![pred(0, 0), pred(1, 1), pred(2, 2), pred(0, 2)];
        let report = metric_report(&preds).unwrap();
        let table = render_table(&report);
        assert!(table.contains("AUC0/12"));
        assert!(table.contains("Accuracy"));
        assert!(table.contains("macro-F1"));
    }
}
