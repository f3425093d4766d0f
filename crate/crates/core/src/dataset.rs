//! Dataset construction from answer-generator citation signals: positive /
//! hard-negative partitioning, random negatives from a global corpus,
//! class-balanced deterministic splits, double-annotation agreement
//! statistics, and training-file exports.

use std::collections::HashMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::rollout::prompts::render_umbrela_prompt;
use crate::rollout::QueryDocPair;
use crate::tagparse::Label;

/// One generator-log row: how many times the generator ran for this query
/// (`forwards`) and in how many of those runs it cited this document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationLogEntry {
    pub query: String,
    pub doc_id: String,
    pub doc_text: String,
    pub forwards: u32,
    pub citation_count: u32,
}

/// Provenance of a pair's label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSource {
    CitationPositive,
    CitationHardNegative,
    RandomNegative,
    Human,
}

/// A pair with provenance. Citation-derived labels are provisional;
/// human labels override them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledPair {
    #[serde(flatten)]
    pub pair: QueryDocPair,
    pub label_source: LabelSource,
}

/// Citation partition: every accepted entry lands in exactly one class.
#[derive(Debug, Clone, Default)]
pub struct CitationPartition {
    pub positives: Vec<LabeledPair>,
    pub hard_negatives: Vec<LabeledPair>,
    /// Entries whose `forwards` did not match the required count.
    pub rejected: Vec<GenerationLogEntry>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DatasetError {
    #[error("citation threshold {threshold} exceeds required forwards {forwards}")]
    ThresholdAboveForwards { threshold: u32, forwards: u32 },
    #[error("citation threshold must be >= 1")]
    ZeroThreshold,
    #[error("entry {doc_id}: citation_count {citations} exceeds forwards {forwards}")]
    CitationsExceedForwards {
        doc_id: String,
        citations: u32,
        forwards: u32,
    },
    #[error("not enough samples to balance: {0}")]
    BalanceShortfall(String),
    #[error("not enough corpus documents: requested {requested}, available {available}")]
    CorpusTooSmall { requested: usize, available: usize },
    #[error("pair {pair_id} has {count} annotations; double annotation requires exactly 2")]
    NotDoubleAnnotated { pair_id: String, count: usize },
    #[error("no annotation records")]
    EmptyAnnotations,
    #[error("train_size {train_size} exceeds available labeled pairs {available}")]
    TrainSizeTooLarge { train_size: usize, available: usize },
}

/// Provisional label for a citation class, used for cold-start data only.
fn provisional_label(source: LabelSource) -> Label {
    match source {
        LabelSource::CitationPositive => Label::High,
        LabelSource::CitationHardNegative => Label::Partial,
        LabelSource::RandomNegative => Label::Irrelevant,
        LabelSource::Human => unreachable!("human labels come from annotations"),
    }
}

fn pair_from_entry(entry: &GenerationLogEntry, source: LabelSource) -> LabeledPair {
    LabeledPair {
        pair: QueryDocPair {
            id: format!("{}::{}", entry.query, entry.doc_id),
            query: entry.query.clone(),
            aux_docs: Vec::new(),
            candidate: entry.doc_text.clone(),
            gold: Some(provisional_label(source)),
        },
        label_source: source,
    }
}

/// Partition log entries by the citation rule: cited in at least
/// `citation_threshold` of `forwards_required` generator runs is a
/// high-confidence positive, otherwise a hard negative. Entries with a
/// different `forwards` count are rejected; a citation count above the
/// forwards count is a data error.
pub fn label_by_citation(
    entries: &[GenerationLogEntry],
    forwards_required: u32,
    citation_threshold: u32,
) -> Result<CitationPartition, DatasetError> {
    if citation_threshold == 0 {
        return Err(DatasetError::ZeroThreshold);
    }
    if citation_threshold > forwards_required {
        return Err(DatasetError::ThresholdAboveForwards {
            threshold: citation_threshold,
            forwards: forwards_required,
        });
    }
    let mut partition = CitationPartition::default();
    for entry in entries {
        if entry.citation_count > entry.forwards {
            return Err(DatasetError::CitationsExceedForwards {
                doc_id: entry.doc_id.clone(),
                citations: entry.citation_count,
                forwards: entry.forwards,
            });
        }
        if entry.forwards != forwards_required {
            partition.rejected.push(entry.clone());
        } else if entry.citation_count >= citation_threshold {
            partition
                .positives
                .push(pair_from_entry(entry, LabelSource::CitationPositive));
        } else {
            partition
                .hard_negatives
                .push(pair_from_entry(entry, LabelSource::CitationHardNegative));
        }
    }
    Ok(partition)
}

/// A corpus document used for random-negative mining.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusDoc {
    pub doc_id: String,
    pub doc_text: String,
}

/// Draw `count` random negatives: queries sampled from the labeled pairs,
/// documents from the corpus minus every cited doc id.
pub fn mine_random_negatives(
    positives: &[LabeledPair],
    hard_negatives: &[LabeledPair],
    corpus: &[CorpusDoc],
    cited_doc_ids: &[String],
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<LabeledPair>, DatasetError> {
    let cited: std::collections::HashSet<&str> = cited_doc_ids.iter().map(String::as_str).collect();
    let pool: Vec<&CorpusDoc> = corpus
        .iter()
        .filter(|d| !cited.contains(d.doc_id.as_str()))
        .collect();
    if pool.is_empty() && count > 0 {
        return Err(DatasetError::CorpusTooSmall {
            requested: count,
            available: 0,
        });
    }
    let queries: Vec<&str> = positives
        .iter()
        .chain(hard_negatives)
        .map(|p| p.pair.query.as_str())
        .collect();
    if queries.is_empty() && count > 0 {
        return Err(DatasetError::BalanceShortfall(
            "no queries to pair random negatives with".into(),
        ));
    }
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let query = queries[rand::Rng::random_range(rng, 0..queries.len())];
        let doc = pool[rand::Rng::random_range(rng, 0..pool.len())];
        out.push(LabeledPair {
            pair: QueryDocPair {
                id: format!("rand-neg-{i:06}"),
                query: query.to_string(),
                aux_docs: Vec::new(),
                candidate: doc.doc_text.clone(),
                gold: Some(Label::Irrelevant),
            },
            label_source: LabelSource::RandomNegative,
        });
    }
    Ok(out)
}

/// Assemble the train/eval split. With `balance` set, the train split has
/// per-class counts differing by at most one (extra samples go to the
/// lowest class indices); a per-class shortfall is an explicit error.
/// Everything not selected for training becomes the eval split, in input
/// order. Deterministic in `(inputs, seed)`.
#[allow(clippy::too_many_arguments)]
pub fn assemble_dataset(
    positives: &[LabeledPair],
    hard_negatives: &[LabeledPair],
    corpus: &[CorpusDoc],
    random_negative_count: usize,
    balance: bool,
    train_size: usize,
    seed: u64,
) -> Result<(Vec<LabeledPair>, Vec<LabeledPair>), DatasetError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cited_ids: Vec<String> = positives
        .iter()
        .chain(hard_negatives)
        .map(|p| doc_part_of_id(&p.pair.id))
        .collect();
    let randoms = mine_random_negatives(
        positives,
        hard_negatives,
        corpus,
        &cited_ids,
        random_negative_count,
        &mut rng,
    )?;

    let mut all: Vec<LabeledPair> = Vec::new();
    all.extend_from_slice(positives);
    all.extend_from_slice(hard_negatives);
    all.extend(randoms);
    if train_size > all.len() {
        return Err(DatasetError::TrainSizeTooLarge {
            train_size,
            available: all.len(),
        });
    }

    let selected: Vec<usize> = if balance {
        let mut by_class: [Vec<usize>; 3] = [Vec::new(), Vec::new(), Vec::new()];
        for (i, p) in all.iter().enumerate() {
            let gold = p.pair.gold.expect("assembled pairs are labeled");
            by_class[gold.as_u8() as usize].push(i);
        }
        let base = train_size / 3;
        let remainder = train_size % 3;
        let mut quotas = [base; 3];
        for q in quotas.iter_mut().take(remainder) {
            *q += 1;
        }
        let deficits: Vec<String> = quotas
            .iter()
            .enumerate()
            .filter(|&(c, &q)| by_class[c].len() < q)
            .map(|(c, &q)| format!("class {c}: need {q}, have {}", by_class[c].len()))
            .collect();
        if !deficits.is_empty() {
            return Err(DatasetError::BalanceShortfall(deficits.join("; ")));
        }
        let mut selected = Vec::with_capacity(train_size);
        for (class, quota) in quotas.iter().enumerate() {
            let mut indices = by_class[class].clone();
            indices.shuffle(&mut rng);
            selected.extend(indices.into_iter().take(*quota));
        }
        selected
    } else {
        let mut indices: Vec<usize> = (0..all.len()).collect();
        indices.shuffle(&mut rng);
        indices.truncate(train_size);
        selected_sorted(indices)
    };

    let in_train: std::collections::HashSet<usize> = selected.iter().copied().collect();
    let train: Vec<LabeledPair> = selected.iter().map(|&i| all[i].clone()).collect();
    let eval: Vec<LabeledPair> = all
        .iter()
        .enumerate()
        .filter(|(i, _)| !in_train.contains(i))
        .map(|(_, p)| p.clone())
        .collect();
    Ok((train, eval))
}

fn selected_sorted(mut indices: Vec<usize>) -> Vec<usize> {
    indices.sort_unstable();
    indices
}

fn doc_part_of_id(id: &str) -> String {
    id.rsplit("::").next().unwrap_or(id).to_string()
}

/// One annotator's label for one pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub pair_id: String,
    pub annotator_id: String,
    pub label: Label,
}

/// Double-annotation agreement statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    /// Fraction of pairs whose two labels are identical.
    pub raw_agreement: f64,
    /// Chance-corrected agreement: `(p_o - p_e) / (1 - p_e)` with `p_e`
    /// from the pooled marginal label frequencies.
    pub kappa: f64,
    /// Pairs whose agreement falls below the exclusion gate.
    pub flagged: Vec<String>,
}

/// Compute raw agreement and kappa over double-annotated pairs. Each pair
/// must carry exactly two annotations. Pairs whose (binary) agreement falls
/// below `flag_threshold` are flagged for exclusion.
pub fn annotator_agreement(
    records: &[AnnotationRecord],
    flag_threshold: f64,
) -> Result<AgreementReport, DatasetError> {
    if records.is_empty() {
        return Err(DatasetError::EmptyAnnotations);
    }
    let mut per_pair: HashMap<&str, Vec<Label>> = HashMap::new();
    let mut order: Vec<&str> = Vec::new();
    for record in records {
        let entry = per_pair.entry(record.pair_id.as_str()).or_default();
        if entry.is_empty() {
            order.push(record.pair_id.as_str());
        }
        entry.push(record.label);
    }
    for (pair_id, labels) in &per_pair {
        if labels.len() != 2 {
            return Err(DatasetError::NotDoubleAnnotated {
                pair_id: pair_id.to_string(),
                count: labels.len(),
            });
        }
    }

    let n_pairs = per_pair.len() as f64;
    let mut agree = 0usize;
    let mut marginal = [0usize; 3];
    let mut flagged = Vec::new();
    for pair_id in &order {
        let labels = &per_pair[pair_id];
        let identical = labels[0] == labels[1];
        if identical {
            agree += 1;
        }
        let pair_agreement = if identical { 1.0 } else { 0.0 };
        if pair_agreement < flag_threshold {
            flagged.push(pair_id.to_string());
        }
        marginal[labels[0].as_u8() as usize] += 1;
        marginal[labels[1].as_u8() as usize] += 1;
    }
    let p_o = agree as f64 / n_pairs;
    let total_labels = 2.0 * n_pairs;
    let p_e: f64 = marginal
        .iter()
        .map(|&c| (c as f64 / total_labels).powi(2))
        .sum();
    let kappa = if (1.0 - p_e).abs() < f64::EPSILON {
        1.0
    } else {
        (p_o - p_e) / (1.0 - p_e)
    };
    Ok(AgreementReport {
        raw_agreement: p_o,
        kappa,
        flagged,
    })
}

/// Apply human labels on top of provisional citation labels.
pub fn apply_human_labels(pairs: &mut [LabeledPair], annotations: &[AnnotationRecord]) {
    let mut by_pair: HashMap<&str, Label> = HashMap::new();
    for a in annotations {
        by_pair.insert(a.pair_id.as_str(), a.label);
    }
    for p in pairs {
        if let Some(&label) = by_pair.get(p.pair.id.as_str()) {
            p.pair.gold = Some(label);
            p.label_source = LabelSource::Human;
        }
    }
}

/// Training-file export formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExportMode {
    /// Single-prompt annotation conversations paired with a teacher
    /// completion.
    ColdStart,
    /// Plain labeled pairs for reinforcement training.
    Rl,
    /// Per-class score distributions for student training.
    Distill,
}

/// Input record for [`export_training_files`]; mode-specific fields are
/// optional and validated per record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportRecord {
    #[serde(flatten)]
    pub pair: QueryDocPair,
    #[serde(default)]
    pub teacher_response: Option<String>,
    #[serde(default)]
    pub score_probs: Option<[f64; 3]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ExportSummary {
    pub written: usize,
    pub skipped: usize,
}

#[derive(Serialize)]
struct ColdStartLine<'a> {
    id: &'a str,
    messages: Vec<crate::policy::Message>,
    response: &'a str,
}

#[derive(Serialize)]
struct DistillLine<'a> {
    query: &'a str,
    doc: &'a str,
    score_probs: [f64; 3],
}

const DISTILL_PROB_TOLERANCE: f64 = 1e-3;

/// Write mode-specific JSON Lines. Records missing their mode's required
/// fields are skipped and counted; distill probability vectors are accepted
/// within a small mass tolerance and renormalized.
pub fn export_training_files(
    records: &[ExportRecord],
    mode: ExportMode,
    path: &Path,
) -> std::io::Result<ExportSummary> {
    let mut lines: Vec<String> = Vec::with_capacity(records.len());
    let mut summary = ExportSummary::default();
    for record in records {
        let line = match mode {
            ExportMode::Rl => {
                if record.pair.gold.is_none() {
                    tracing::warn!(id = %record.pair.id, "rl export: missing gold label, skipping");
                    None
                } else {
                    Some(serde_json::to_string(&record.pair)?)
                }
            }
            ExportMode::ColdStart => match &record.teacher_response {
                Some(response) => Some(serde_json::to_string(&ColdStartLine {
                    id: &record.pair.id,
                    messages: render_umbrela_prompt(&record.pair.query, &record.pair.candidate),
                    response,
                })?),
                None => {
                    tracing::warn!(id = %record.pair.id, "coldstart export: missing teacher response, skipping");
                    None
                }
            },
            ExportMode::Distill => match record.score_probs {
                Some(probs) => {
                    let mass: f64 = probs.iter().sum();
                    if probs.iter().any(|p| *p < 0.0) || (mass - 1.0).abs() > DISTILL_PROB_TOLERANCE
                    {
                        tracing::warn!(id = %record.pair.id, mass, "distill export: bad probability vector, skipping");
                        None
                    } else {
                        let normalized = [probs[0] / mass, probs[1] / mass, probs[2] / mass];
                        Some(serde_json::to_string(&DistillLine {
                            query: &record.pair.query,
                            doc: &record.pair.candidate,
                            score_probs: normalized,
                        })?)
                    }
                }
                None => {
                    tracing::warn!(id = %record.pair.id, "distill export: missing score_probs, skipping");
                    None
                }
            },
        };
        match line {
            Some(l) => {
                lines.push(l);
                summary.written += 1;
            }
            None => summary.skipped += 1,
        }
    }
    let mut body = lines.join("\n");
    if !body.is_empty() {
        body.push('\n');
    }
    crate::io::write_atomic(path, body.as_bytes())?;
    Ok(summary)
}

/// Parse a `pair_id,annotator_id,label` CSV (header optional).
pub fn parse_annotation_csv(text: &str) -> Result<Vec<AnnotationRecord>, String> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (idx == 0 && line.to_ascii_lowercase().starts_with("pair_id")) {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(format!(
                "line {}: expected 3 fields, got {}",
                idx + 1,
                fields.len()
            ));
        }
        let value: u8 = fields[2]
            .trim()
            .parse()
            .map_err(|e| format!("line {}: bad label: {e}", idx + 1))?;
        let label = Label::try_from(value).map_err(|e| format!("line {}: {e}", idx + 1))?;
        out.push(AnnotationRecord {
            pair_id: fields[0].trim().to_string(),
            annotator_id: fields[1].trim().to_string(),
            label,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(doc_id: &str, forwards: u32, citations: u32) -> GenerationLogEntry {
        GenerationLogEntry {
            query: format!("query for {doc_id}"),
            doc_id: doc_id.into(),
            doc_text: format!("text of {doc_id}"),
            forwards,
            citation_count: citations,
        }
    }

    #[test]
    fn citation_rule_partitions() {
        let entries = vec![
            entry("a", 5, 2),
            entry("b", 5, 1),
            entry("c", 5, 0),
            entry("d", 3, 1),
        ];
        let partition = label_by_citation(&entries, 5, 2).unwrap();
        assert_eq!(partition.positives.len(), 1);
        assert_eq!(partition.hard_negatives.len(), 2);
        assert_eq!(partition.rejected.len(), 1);
        assert_eq!(partition.positives[0].pair.gold, Some(Label::High));
        assert_eq!(partition.hard_negatives[0].pair.gold, Some(Label::Partial));
    }

    #[test]
    fn citation_count_above_forwards_is_data_error() {
        let err = label_by_citation(&[entry("a", 5, 6)], 5, 2).unwrap_err();
        assert!(matches!(err, DatasetError::CitationsExceedForwards { .. }));
    }

    #[test]
    fn threshold_above_forwards_is_config_error() {
        let err = label_by_citation(&[], 2, 5).unwrap_err();
        assert!(matches!(err, DatasetError::ThresholdAboveForwards { .. }));
    }

    fn synthetic_inputs(per_class: usize) -> (Vec<LabeledPair>, Vec<LabeledPair>, Vec<CorpusDoc>) {
        let entries_pos: Vec<GenerationLogEntry> = (0..per_class)
            .map(|i| entry(&format!("pos{i}"), 5, 3))
            .collect();
        let entries_hard: Vec<GenerationLogEntry> = (0..per_class)
            .map(|i| entry(&format!("hard{i}"), 5, 0))
            .collect();
        let all: Vec<GenerationLogEntry> =
            entries_pos.iter().chain(&entries_hard).cloned().collect();
        let partition = label_by_citation(&all, 5, 2).unwrap();
        let corpus: Vec<CorpusDoc> = (0..per_class * 2)
            .map(|i| CorpusDoc {
                doc_id: format!("corpus{i}"),
                doc_text: format!("noise {i}"),
            })
            .collect();
        (partition.positives, partition.hard_negatives, corpus)
    }

    #[test]
    fn balanced_split_counts_differ_by_at_most_one() {
        let (pos, hard, corpus) = synthetic_inputs(2000);
        let (train, eval) = assemble_dataset(&pos, &hard, &corpus, 2000, true, 5001, 42).unwrap();
        assert_eq!(train.len(), 5001);
        let mut counts = [0usize; 3];
        for p in &train {
            counts[p.pair.gold.unwrap().as_u8() as usize] += 1;
        }
        assert_eq!(counts, [1667, 1667, 1667]);
        assert_eq!(eval.len(), 6000 - 5001);
    }

    #[test]
    fn split_is_deterministic() {
        let (pos, hard, corpus) = synthetic_inputs(100);
        let a = assemble_dataset(&pos, &hard, &corpus, 100, true, 150, 7).unwrap();
        let b = assemble_dataset(&pos, &hard, &corpus, 100, true, 150, 7).unwrap();
        assert_eq!(a, b);
        let c = assemble_dataset(&pos, &hard, &corpus, 100, true, 150, 8).unwrap();
        assert_ne!(a.0, c.0);
    }

    #[test]
    fn balance_shortfall_lists_deficits() {
        // 10 positives (class 2), 10 hard negatives (class 1), but only 2
        // random negatives (class 0): a balanced 21-sample split needs 7
        // per class.
        let (pos, hard, corpus) = synthetic_inputs(10);
        let err = assemble_dataset(&pos, &hard, &corpus, 2, true, 21, 7).unwrap_err();
        match err {
            DatasetError::BalanceShortfall(msg) => assert!(msg.contains("class 0"), "{msg}"),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn random_negatives_avoid_cited_docs() {
        let (pos, hard, corpus) = synthetic_inputs(5);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cited: Vec<String> = corpus.iter().take(9).map(|d| d.doc_id.clone()).collect();
        let negatives = mine_random_negatives(&pos, &hard, &corpus, &cited, 50, &mut rng).unwrap();
        for n in &negatives {
            assert_eq!(n.pair.candidate, "noise 9");
        }
    }

    #[test]
    fn agreement_perfect() {
        let records: Vec<AnnotationRecord> = (0..10)
            .flat_map(|i| {
                ["a", "b"].map(|ann| AnnotationRecord {
                    pair_id: format!("p{i}"),
                    annotator_id: ann.into(),
                    label: Label::Partial,
                })
            })
            .collect();
        let report = annotator_agreement(&records, 0.5).unwrap();
        assert_eq!(report.raw_agreement, 1.0);
        assert_eq!(report.kappa, 1.0);
        assert!(report.flagged.is_empty());
    }

    #[test]
    fn agreement_hand_computed_case() {
        // Annotator 1: [0,0,1,1]; annotator 2: [0,1,1,1].
        // p_o = 0.75; pooled marginals p(0)=3/8, p(1)=5/8 give
        // p_e = 0.140625 + 0.390625 = 0.53125 and kappa ~ 0.4667.
        let labels_a = [0u8, 0, 1, 1];
        let labels_b = [0u8, 1, 1, 1];
        let mut records = Vec::new();
        for i in 0..4 {
            records.push(AnnotationRecord {
                pair_id: format!("p{i}"),
                annotator_id: "a".into(),
                label: Label::try_from(labels_a[i]).unwrap(),
            });
            records.push(AnnotationRecord {
                pair_id: format!("p{i}"),
                annotator_id: "b".into(),
                label: Label::try_from(labels_b[i]).unwrap(),
            });
        }
        let report = annotator_agreement(&records, 1.0).unwrap();
        assert!((report.raw_agreement - 0.75).abs() < 1e-12);
        assert!(
            (report.kappa - 0.4666666667).abs() < 1e-9,
            "{}",
            report.kappa
        );
        assert_eq!(report.flagged, vec!["p1".to_string()]);
    }

    #[test]
    fn constant_annotator_yields_nonpositive_kappa() {
        let labels_a = [0u8, 1, 2, 0, 1, 2];
        let mut records = Vec::new();
        for (i, &la) in labels_a.iter().enumerate() {
            records.push(AnnotationRecord {
                pair_id: format!("p{i}"),
                annotator_id: "a".into(),
                label: Label::try_from(la).unwrap(),
            });
            records.push(AnnotationRecord {
                pair_id: format!("p{i}"),
                annotator_id: "b".into(),
                label: Label::High,
            });
        }
        let report = annotator_agreement(&records, 0.0).unwrap();
        assert!(report.kappa <= 0.0, "{}", report.kappa);
    }

    #[test]
    fn kappa_never_exceeds_one_and_hits_it_only_at_full_agreement() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(0xCA9A);
        for case in 0..200 {
            let n = rng.random_range(2..30);
            let mut records = Vec::new();
            let mut all_agree = true;
            for i in 0..n {
                let a: u8 = rng.random_range(0..3);
                let b: u8 = if case % 4 == 0 {
                    a
                } else {
                    rng.random_range(0..3)
                };
                all_agree &= a == b;
                records.push(AnnotationRecord {
                    pair_id: format!("p{i}"),
                    annotator_id: "a".into(),
                    label: Label::try_from(a).unwrap(),
                });
                records.push(AnnotationRecord {
                    pair_id: format!("p{i}"),
                    annotator_id: "b".into(),
                    label: Label::try_from(b).unwrap(),
                });
            }
            let report = annotator_agreement(&records, 0.0).unwrap();
            assert!(
                report.kappa <= 1.0 + 1e-12,
                "case {case}: kappa {}",
                report.kappa
            );
            if (report.kappa - 1.0).abs() < 1e-12 {
                assert!(all_agree, "case {case}: kappa 1 without full agreement");
            }
        }
    }

    #[test]
    fn non_double_annotation_is_rejected() {
        let records = vec![AnnotationRecord {
            pair_id: "p0".into(),
            annotator_id: "a".into(),
            label: Label::High,
        }];
        assert!(matches!(
            annotator_agreement(&records, 0.5),
            Err(DatasetError::NotDoubleAnnotated { .. })
        ));
    }

    fn export_record(id: &str) -> ExportRecord {
        ExportRecord {
            pair: QueryDocPair {
                id: id.into(),
                query: "q".into(),
                aux_docs: vec![],
                candidate: "doc".into(),
                gold: Some(Label::Partial),
            },
            teacher_response: Some("<think>r</think>\n<score>1</score>".into()),
            score_probs: Some([0.2, 0.5, 0.299999]),
        }
    }

    #[test]
    fn rl_export_echoes_pairs() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rl.jsonl");
        let records = vec![export_record("a"), export_record("b"), export_record("c")];
        let summary = export_training_files(&records, ExportMode::Rl, &path).unwrap();
        assert_eq!(summary.written, 3);
        let lines: Vec<QueryDocPair> = crate::io::read_jsonl(&path).unwrap();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0].id, "a");
    }

    #[test]
    fn distill_export_renormalizes_within_tolerance() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("distill.jsonl");
        let summary =
            export_training_files(&[export_record("a")], ExportMode::Distill, &path).unwrap();
        assert_eq!(summary.written, 1);
        let line = std::fs::read_to_string(&path).unwrap();
        let value: serde_json::Value = serde_json::from_str(line.trim()).unwrap();
        let probs: Vec<f64> = value["score_probs"]
            .as_array()
            .unwrap()
            .iter()
            .map(|v| v.as_f64().unwrap())
            .collect();
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn distill_export_rejects_far_off_mass() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("distill.jsonl");
        let mut record = export_record("a");
        record.score_probs = Some([0.5, 0.5, 0.5]);
        let summary = export_training_files(&[record], ExportMode::Distill, &path).unwrap();
        assert_eq!(summary.written, 0);
        assert_eq!(summary.skipped, 1);
    }

    #[test]
    fn coldstart_export_skips_missing_teacher() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cold.jsonl");
        let mut missing = export_record("a");
        missing.teacher_response = None;
        let summary =
            export_training_files(&[missing, export_record("b")], ExportMode::ColdStart, &path)
                .unwrap();
        assert_eq!(summary.written, 1);
        assert_eq!(summary.skipped, 1);
        let line = std::fs::read_to_string(&path).unwrap();
        assert!(line.contains("integer scale of 0 to 2"));
    }

    #[test]
    fn annotation_csv_parses_with_header() {
        let csv = "pair_id,annotator_id,label\np0,a,2\np0,b,1\n";
        let records = parse_annotation_csv(csv).unwrap();
        assert_eq!(records.len(), 2);
        assert_eq!(records[0].label, Label::High);
        assert!(parse_annotation_csv("p0,a,9").is_err());
    }

    #[test]
    fn human_labels_override() {
        let (mut pos, _, _) = synthetic_inputs(2);
        let id = pos[0].pair.id.clone();
        apply_human_labels(
            &mut pos,
            &[AnnotationRecord {
                pair_id: id,
                annotator_id: "a".into(),
                label: Label::Irrelevant,
            }],
        );
        assert_eq!(pos[0].pair.gold, Some(Label::Irrelevant));
        assert_eq!(pos[0].label_source, LabelSource::Human);
        assert_eq!(pos[1].label_source, LabelSource::CitationPositive);
    }
}
