//! Tag-structured output grammar for the two interaction rounds.
//!
//! Both rounds must emit a fixed sequence of tags, each exactly once, in
//! order, with nothing but whitespace outside the tag bodies. Round 1 is
//! `<think>…</think><intent>…</intent>`; round 2 is
//! `<think>…</think><extract>…</extract><score>…</score>`. The extract body
//! is either a verbatim fragment of the candidate document or the
//! none-sentinel (`none`, compared case-insensitively). The score body is a
//! bare `0`, `1`, or `2`.
//!
//! Parsing is structural only: whitespace between tags and around bodies is
//! tolerated and trimmed, but a stray token, duplicated tag, or out-of-order
//! tag fails with a [`ParseFailure`] naming the violated rule.

use std::fmt;

use serde::{Deserialize, Serialize};

/// The three-level relevance label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Irrelevant,
    Partial,
    High,
}

impl Label {
    pub const ALL: [Label; 3] = [Label::Irrelevant, Label::Partial, Label::High];

    pub fn as_u8(self) -> u8 {
        match self {
            Label::Irrelevant => 0,
            Label::Partial => 1,
            Label::High => 2,
        }
    }

    /// Absolute distance between two labels on the 0-2 scale.
    pub fn distance(self, other: Label) -> u8 {
        self.as_u8().abs_diff(other.as_u8())
    }
}

impl TryFrom<u8> for Label {
    type Error = LabelError;

    fn try_from(value: u8) -> Result<Self, Self::Error> {
        match value {
            0 => Ok(Label::Irrelevant),
            1 => Ok(Label::Partial),
            2 => Ok(Label::High),
            other => Err(LabelError(other)),
        }
    }
}

/// A label outside {0, 1, 2}.
#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("label {0} is not one of 0, 1, 2")]
pub struct LabelError(pub u8);

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_u8())
    }
}

impl Serialize for Label {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_u8(self.as_u8())
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let v = u8::deserialize(deserializer)?;
        Label::try_from(v).map_err(serde::de::Error::custom)
    }
}

/// The extract field of a round-2 output: a verbatim fragment or the
/// none-sentinel.
///
/// Serialized as a plain string. The literal `"none"` (any casing) always
/// means [`Extraction::None`]; a fragment can therefore never collide with
/// the sentinel, because the parser performs the same mapping.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Extraction {
    None,
    Fragment(String),
}

impl Extraction {
    pub fn is_none(&self) -> bool {
        matches!(self, Extraction::None)
    }

    pub fn as_fragment(&self) -> Option<&str> {
        match self {
            Extraction::None => None,
            Extraction::Fragment(s) => Some(s),
        }
    }

    fn from_body(body: &str) -> Extraction {
        if body.eq_ignore_ascii_case(NONE_SENTINEL) {
            Extraction::None
        } else {
            Extraction::Fragment(body.to_string())
        }
    }
}

impl Serialize for Extraction {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            Extraction::None => serializer.serialize_str(NONE_SENTINEL),
            Extraction::Fragment(s) => serializer.serialize_str(s),
        }
    }
}

impl<'de> Deserialize<'de> for Extraction {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Ok(Extraction::from_body(&s))
    }
}

/// Sentinel emitted when no relevant fragment exists in the document.
pub const NONE_SENTINEL: &str = "none";

/// Parsed round-1 output: reasoning plus the inferred user intent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Round1Output {
    pub think: String,
    pub intent: String,
}

/// Parsed round-2 output: reasoning, extraction, and the relevance score.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Round2Output {
    pub think: String,
    pub extract: Extraction,
    pub score: Label,
}

/// Parsed single-round output (interaction-round ablation): intent,
/// extraction, and score from one response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SingleRoundOutput {
    pub think: String,
    pub intent: String,
    pub extract: Extraction,
    pub score: Label,
}

/// Which grammar rule an input violated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FailureKind {
    /// A required tag (open or close) does not appear.
    MissingTag,
    /// A tag token appears more than once.
    DuplicateTag,
    /// All tags appear exactly once but not in the required order (this
    /// also covers nesting).
    WrongOrder,
    /// Non-whitespace content outside the tag bodies (before, between, or
    /// after the tags).
    TrailingContent,
    /// The score body is not exactly `0`, `1`, or `2`.
    BadScoreToken,
    /// A text or extract body is empty after trimming.
    EmptyField,
}

/// A structural parse failure with the character offset where it was
/// detected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
#[error("{kind:?} at offset {position}")]
pub struct ParseFailure {
    pub kind: FailureKind,
    pub position: usize,
}

impl ParseFailure {
    fn at(kind: FailureKind, text: &str, byte_pos: usize) -> ParseFailure {
        ParseFailure {
            kind,
            position: char_offset(text, byte_pos),
        }
    }
}

fn char_offset(text: &str, byte_pos: usize) -> usize {
    text[..byte_pos.min(text.len())].chars().count()
}

/// How a tag body is validated after structural parsing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BodyKind {
    /// Non-empty free text after trimming.
    Text,
    /// Fragment text or the none-sentinel; non-empty after trimming.
    Extract,
    /// Bare integer token `0`, `1`, or `2`.
    Score,
}

#[derive(Debug, Clone, Copy)]
struct TagSpec {
    name: &'static str,
    body: BodyKind,
}

const THINK: TagSpec = TagSpec {
    name: "think",
    body: BodyKind::Text,
};
const INTENT: TagSpec = TagSpec {
    name: "intent",
    body: BodyKind::Text,
};
const EXTRACT: TagSpec = TagSpec {
    name: "extract",
    body: BodyKind::Extract,
};
const SCORE: TagSpec = TagSpec {
    name: "score",
    body: BodyKind::Score,
};

const ROUND1_GRAMMAR: &[TagSpec] = &[THINK, INTENT];
const ROUND1_NO_INTENT_GRAMMAR: &[TagSpec] = &[THINK];
const ROUND2_GRAMMAR: &[TagSpec] = &[THINK, EXTRACT, SCORE];
const ROUND2_NO_EXTRACT_GRAMMAR: &[TagSpec] = &[THINK, SCORE];
const SINGLE_ROUND_GRAMMAR: &[TagSpec] = &[THINK, INTENT, EXTRACT, SCORE];

/// The interaction-format ablation switches. `Full` is the two-round
/// grammar with intent and extraction; the others remove one tag or
/// collapse the interaction into a single round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    #[default]
    Full,
    NoIntent,
    NoExtract,
    SingleRound,
}

impl Variant {
    /// Whether this variant runs a second interaction round.
    pub fn has_round2(self) -> bool {
        !matches!(self, Variant::SingleRound)
    }

    fn round1_grammar(self) -> &'static [TagSpec] {
        match self {
            Variant::NoIntent => ROUND1_NO_INTENT_GRAMMAR,
            Variant::SingleRound => SINGLE_ROUND_GRAMMAR,
            _ => ROUND1_GRAMMAR,
        }
    }

    fn round2_grammar(self) -> Option<&'static [TagSpec]> {
        match self {
            Variant::SingleRound => None,
            Variant::NoExtract => Some(ROUND2_NO_EXTRACT_GRAMMAR),
            _ => Some(ROUND2_GRAMMAR),
        }
    }
}

/// Unified view over any variant's parsed response: fields absent from the
/// active grammar stay `None`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ParsedRound {
    pub think: Option<String>,
    pub intent: Option<String>,
    pub extract: Option<Extraction>,
    pub score: Option<Label>,
}

fn collect_round(tags: &[TagSpec], fields: Vec<FieldValue>) -> ParsedRound {
    let mut round = ParsedRound::default();
    for (tag, field) in tags.iter().zip(fields) {
        match (tag.name, field) {
            ("think", FieldValue::Text(s)) => round.think = Some(s),
            ("intent", FieldValue::Text(s)) => round.intent = Some(s),
            (_, FieldValue::Extract(e)) => round.extract = Some(e),
            (_, FieldValue::Score(l)) => round.score = Some(l),
            _ => {}
        }
    }
    round
}

/// Parse a round-1 response under the given variant's grammar.
pub fn parse_round1_variant(text: &str, variant: Variant) -> Result<ParsedRound, ParseFailure> {
    let tags = variant.round1_grammar();
    parse_tagged(text, tags).map(|fields| collect_round(tags, fields))
}

/// Parse a round-2 response under the given variant's grammar; `None` when
/// the variant has no second round.
pub fn parse_round2_variant(
    text: &str,
    variant: Variant,
) -> Option<Result<ParsedRound, ParseFailure>> {
    variant
        .round2_grammar()
        .map(|tags| parse_tagged(text, tags).map(|fields| collect_round(tags, fields)))
}

impl TagSpec {
    fn open(&self) -> String {
        format!("<{}>", self.name)
    }

    fn close(&self) -> String {
        format!("</{}>", self.name)
    }
}

/// Raw body values produced by the structural parser, in grammar order.
#[derive(Debug, Clone, PartialEq)]
enum FieldValue {
    Text(String),
    Extract(Extraction),
    Score(Label),
}

fn find_all(haystack: &str, needle: &str) -> Vec<usize> {
    let mut out = Vec::new();
    let mut start = 0;
    while let Some(idx) = haystack[start..].find(needle) {
        out.push(start + idx);
        start += idx + needle.len();
    }
    out
}

/// Parse `text` against an ordered tag grammar: each tag exactly once, in
/// order, whitespace-only content outside the bodies.
fn parse_tagged(text: &str, tags: &[TagSpec]) -> Result<Vec<FieldValue>, ParseFailure> {
    // Exactly-once rule, checked per tag in grammar order.
    let mut spans: Vec<(usize, usize, usize, usize)> = Vec::with_capacity(tags.len());
    for tag in tags {
        let open = tag.open();
        let close = tag.close();
        // `</t>` contains `<t>`? No: "</think>" does not contain "<think>",
        // so plain substring counting per token is unambiguous.
        let opens = find_all(text, &open);
        let closes: Vec<usize> = find_all(text, &close);
        if opens.is_empty() || closes.is_empty() {
            return Err(ParseFailure::at(FailureKind::MissingTag, text, text.len()));
        }
        if opens.len() >= 2 {
            return Err(ParseFailure::at(FailureKind::DuplicateTag, text, opens[1]));
        }
        if closes.len() >= 2 {
            return Err(ParseFailure::at(FailureKind::DuplicateTag, text, closes[1]));
        }
        spans.push((
            opens[0],
            opens[0] + open.len(),
            closes[0],
            closes[0] + close.len(),
        ));
    }

    // Order rule: open_1 < close_1 < open_2 < close_2 < … strictly. Nesting
    // shows up here as an inversion.
    let mut prev_end = 0usize;
    for &(open_start, _, close_start, close_end) in &spans {
        if open_start < prev_end || close_start < open_start {
            let offending = if open_start < prev_end {
                open_start
            } else {
                close_start
            };
            return Err(ParseFailure::at(FailureKind::WrongOrder, text, offending));
        }
        prev_end = close_end;
    }

    // Outside-content rule: the gaps before/between/after the tags must be
    // whitespace.
    let mut gap_start = 0usize;
    for &(open_start, _, _, close_end) in &spans {
        if let Some(pos) = first_non_ws(&text[gap_start..open_start]) {
            return Err(ParseFailure::at(
                FailureKind::TrailingContent,
                text,
                gap_start + pos,
            ));
        }
        gap_start = close_end;
    }
    if let Some(pos) = first_non_ws(&text[gap_start..]) {
        return Err(ParseFailure::at(
            FailureKind::TrailingContent,
            text,
            gap_start + pos,
        ));
    }

    // Body validation.
    let mut fields = Vec::with_capacity(tags.len());
    for (tag, &(_, body_start, body_end, _)) in tags.iter().zip(&spans) {
        let body = text[body_start..body_end].trim();
        let value = match tag.body {
            BodyKind::Text => {
                if body.is_empty() {
                    return Err(ParseFailure::at(FailureKind::EmptyField, text, body_start));
                }
                FieldValue::Text(body.to_string())
            }
            BodyKind::Extract => {
                if body.is_empty() {
                    return Err(ParseFailure::at(FailureKind::EmptyField, text, body_start));
                }
                FieldValue::Extract(Extraction::from_body(body))
            }
            BodyKind::Score => match body {
                "0" => FieldValue::Score(Label::Irrelevant),
                "1" => FieldValue::Score(Label::Partial),
                "2" => FieldValue::Score(Label::High),
                _ => {
                    return Err(ParseFailure::at(
                        FailureKind::BadScoreToken,
                        text,
                        body_start,
                    ))
                }
            },
        };
        fields.push(value);
    }
    Ok(fields)
}

fn first_non_ws(s: &str) -> Option<usize> {
    s.char_indices()
        .find(|(_, c)| !c.is_whitespace())
        .map(|(i, _)| i)
}

/// Parse a raw round-1 response: `<think>…</think><intent>…</intent>`.
pub fn parse_round1(text: &str) -> Result<Round1Output, ParseFailure> {
    let fields = parse_tagged(text, ROUND1_GRAMMAR)?;
    match (&fields[0], &fields[1]) {
        (FieldValue::Text(think), FieldValue::Text(intent)) => Ok(Round1Output {
            think: think.clone(),
            intent: intent.clone(),
        }),
        _ => unreachable!("round-1 grammar produces two text fields"),
    }
}

/// Parse a raw round-2 response:
/// `<think>…</think><extract>…</extract><score>…</score>`.
pub fn parse_round2(text: &str) -> Result<Round2Output, ParseFailure> {
    let fields = parse_tagged(text, ROUND2_GRAMMAR)?;
    match (&fields[0], &fields[1], &fields[2]) {
        (FieldValue::Text(think), FieldValue::Extract(extract), FieldValue::Score(score)) => {
            Ok(Round2Output {
                think: think.clone(),
                extract: extract.clone(),
                score: *score,
            })
        }
        _ => unreachable!("round-2 grammar produces text, extract, score"),
    }
}

/// Parse the single-round ablation format:
/// `<think>…</think><intent>…</intent><extract>…</extract><score>…</score>`.
pub fn parse_single_round(text: &str) -> Result<SingleRoundOutput, ParseFailure> {
    let fields = parse_tagged(text, SINGLE_ROUND_GRAMMAR)?;
    match (&fields[0], &fields[1], &fields[2], &fields[3]) {
        (
            FieldValue::Text(think),
            FieldValue::Text(intent),
            FieldValue::Extract(extract),
            FieldValue::Score(score),
        ) => Ok(SingleRoundOutput {
            think: think.clone(),
            intent: intent.clone(),
            extract: extract.clone(),
            score: *score,
        }),
        _ => unreachable!("single-round grammar shape is fixed"),
    }
}

/// True iff `extract` is the none-sentinel or a contiguous byte-for-byte
/// substring of `document` after trimming only leading/trailing whitespace.
/// Interior punctuation, casing, and spacing must match exactly.
pub fn validate_extract(extract: &Extraction, document: &str) -> bool {
    match extract {
        Extraction::None => true,
        Extraction::Fragment(f) => {
            let fragment = f.trim();
            !fragment.is_empty() && document.contains(fragment)
        }
    }
}

/// Canonical rendering of a round-1 output. Parsing the result yields the
/// original value whenever the fields are trimmed and tag-free.
pub fn render_round1(output: &Round1Output) -> String {
    format!(
        "<think>{}</think>\n<intent>{}</intent>",
        output.think, output.intent
    )
}

/// Canonical rendering of a round-2 output.
pub fn render_round2(output: &Round2Output) -> String {
    let extract = match &output.extract {
        Extraction::None => NONE_SENTINEL,
        Extraction::Fragment(f) => f.as_str(),
    };
    format!(
        "<think>{}</think>\n<extract>{}</extract>\n<score>{}</score>",
        output.think, extract, output.score
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_valid_round1() {
        let out =
            parse_round1("<think>ski query</think><intent>find ski resorts</intent>").unwrap();
        assert_eq!(out.think, "ski query");
        assert_eq!(out.intent, "find ski resorts");
    }

    #[test]
    fn round1_tolerates_whitespace() {
        let out = parse_round1("  <think> a </think>\n\n<intent>\tb </intent>\n").unwrap();
        assert_eq!(out.think, "a");
        assert_eq!(out.intent, "b");
    }

    #[test]
    fn round1_missing_intent() {
        let err = parse_round1("<think>x</think>").unwrap_err();
        assert_eq!(err.kind, FailureKind::MissingTag);
    }

    #[test]
    fn round1_duplicate_intent() {
        let err = parse_round1("<think>a</think><intent>b</intent><intent>c</intent>").unwrap_err();
        assert_eq!(err.kind, FailureKind::DuplicateTag);
    }

    #[test]
    fn round1_wrong_order() {
        let err = parse_round1("<intent>b</intent><think>a</think>").unwrap_err();
        assert_eq!(err.kind, FailureKind::WrongOrder);
    }

    #[test]
    fn round1_nested_is_order_violation() {
        let err = parse_round1("<think>a<intent>b</intent>c</think>").unwrap_err();
        assert_eq!(err.kind, FailureKind::WrongOrder);
    }

    #[test]
    fn round1_leading_junk() {
        let err = parse_round1("oops<think>a</think><intent>b</intent>").unwrap_err();
        assert_eq!(err.kind, FailureKind::TrailingContent);
        assert_eq!(err.position, 0);
    }

    #[test]
    fn round1_trailing_junk() {
        let err = parse_round1("<think>a</think><intent>b</intent>!").unwrap_err();
        assert_eq!(err.kind, FailureKind::TrailingContent);
    }

    #[test]
    fn round1_empty_field() {
        let err = parse_round1("<think>  </think><intent>b</intent>").unwrap_err();
        assert_eq!(err.kind, FailureKind::EmptyField);
    }

    #[test]
    fn parses_valid_round2_with_none() {
        let out = parse_round2("<think>t</think><extract>none</extract><score>0</score>").unwrap();
        assert_eq!(out.extract, Extraction::None);
        assert_eq!(out.score, Label::Irrelevant);
    }

    #[test]
    fn none_sentinel_is_case_insensitive() {
        for sentinel in ["none", "None", "NONE", " nOnE "] {
            let text = format!("<think>t</think><extract>{sentinel}</extract><score>1</score>");
            assert_eq!(parse_round2(&text).unwrap().extract, Extraction::None);
        }
    }

    #[test]
    fn parses_valid_round2_with_fragment() {
        let out =
            parse_round2("<think>t</think><extract>best ramen in Ueno</extract><score>2</score>")
                .unwrap();
        assert_eq!(
            out.extract,
            Extraction::Fragment("best ramen in Ueno".into())
        );
        assert_eq!(out.score, Label::High);
    }

    #[test]
    fn bad_score_tokens() {
        for bad in ["3", "1.0", "score: 2", "-1", "02", ""] {
            let text = format!("<think>t</think><extract>x</extract><score>{bad}</score>");
            let err = parse_round2(&text).unwrap_err();
            assert_eq!(err.kind, FailureKind::BadScoreToken, "score body {bad:?}");
        }
    }

    #[test]
    fn single_round_grammar() {
        let out = parse_single_round(
            "<think>t</think><intent>i</intent><extract>none</extract><score>2</score>",
        )
        .unwrap();
        assert_eq!(out.intent, "i");
        assert_eq!(out.score, Label::High);
    }

    #[test]
    fn validate_extract_substring() {
        let doc = "Day 3: chilling in Shibuya. Great coffee!";
        assert!(validate_extract(
            &Extraction::Fragment("chilling in Shibuya".into()),
            doc
        ));
        assert!(!validate_extract(
            &Extraction::Fragment("chilling in Shibuya!".into()),
            doc
        ));
        assert!(validate_extract(&Extraction::None, ""));
    }

    #[test]
    fn validate_extract_trims_outer_whitespace_only() {
        let doc = "alpha beta gamma";
        assert!(validate_extract(
            &Extraction::Fragment("  beta gamma ".into()),
            doc
        ));
        assert!(!validate_extract(
            &Extraction::Fragment("beta  gamma".into()),
            doc
        ));
    }

    #[test]
    fn round_trip_round1() {
        let original = Round1Output {
            think: "some reasoning".into(),
            intent: "the intent".into(),
        };
        assert_eq!(parse_round1(&render_round1(&original)).unwrap(), original);
    }

    #[test]
    fn round_trip_round2() {
        for extract in [
            Extraction::None,
            Extraction::Fragment("a fragment, verbatim.".into()),
        ] {
            let original = Round2Output {
                think: "why".into(),
                extract,
                score: Label::Partial,
            };
            assert_eq!(parse_round2(&render_round2(&original)).unwrap(), original);
        }
    }

    #[test]
    fn extraction_serde_maps_none_sentinel() {
        let json = serde_json::to_string(&Extraction::None).unwrap();
        assert_eq!(json, "\"none\"");
        let back: Extraction = serde_json::from_str("\"NoNe\"").unwrap();
        assert_eq!(back, Extraction::None);
        let frag: Extraction = serde_json::from_str("\"no-nes\"").unwrap();
        assert_eq!(frag, Extraction::Fragment("no-nes".into()));
    }

    #[test]
    fn failure_position_is_char_offset() {
        // Multibyte characters before the violation.
        let err = parse_round1("日本<think>a</think><intent>b</intent>").unwrap_err();
        assert_eq!(err.kind, FailureKind::TrailingContent);
        assert_eq!(err.position, 0);
        let err = parse_round1("<think>日本</think>x<intent>b</intent>").unwrap_err();
        assert_eq!(err.kind, FailureKind::TrailingContent);
        // "<think>" (7) + 2 chars + "</think>" (8) = 17 chars before `x`.
        assert_eq!(err.position, 17);
    }

    #[test]
    fn variant_grammars() {
        let r1 = parse_round1_variant("<think>a</think>", Variant::NoIntent).unwrap();
        assert_eq!(r1.think.as_deref(), Some("a"));
        assert!(r1.intent.is_none());
        let r2 = parse_round2_variant("<think>a</think><score>1</score>", Variant::NoExtract)
            .unwrap()
            .unwrap();
        assert_eq!(r2.score, Some(Label::Partial));
        assert!(r2.extract.is_none());
        assert!(parse_round2_variant("x", Variant::SingleRound).is_none());
        let combined = parse_round1_variant(
            "<think>a</think><intent>i</intent><extract>none</extract><score>2</score>",
            Variant::SingleRound,
        )
        .unwrap();
        assert_eq!(combined.score, Some(Label::High));
    }
}
