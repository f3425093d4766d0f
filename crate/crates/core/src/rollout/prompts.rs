//! Prompt templates for both interaction rounds and the single-prompt
//! cold-start annotation format.
//!
//! The full-variant templates are fixed verbatim and covered by golden-file
//! tests; substitution sites are `{query}`, `{docs}`, and `{doc}`. Ablation
//! variants only swap the response-format block (and, for the single-round
//! variant, merge both rounds into one user message).

use crate::policy::Message;
use crate::tagparse::Variant;

pub const ROUND1_SYSTEM: &str =
    "You are a content understanding engineer working on a user-generated content platform.";

pub const ROUND1_USER_TEMPLATE: &str = "Please determine the primary intent behind a user's search query, using both your internal knowledge and the provided context.
Your input consists of the [query] and the [in-platform documents] retrieved based on that query. The latter is intended to assist in judging the user's intent but may contain irrelevant content. The search query should be considered the primary reference. Please carefully analyze the given [query] and the corresponding [in-platform documents] to infer the underlying query intent.

Your response must strictly follow the format:
<think> [the reasoning content] </think>
<intent> [inferred user intent] </intent>

Input
[query]: {query}
[in-platform documents]: {docs}";

pub const ROUND2_USER_TEMPLATE: &str = "Please assess the relevance of the [document to be evaluated] based on the user's input [query] and the inferred [intent], and extract the relevant fragment of the document accordingly.

Scoring Criteria
0 = not relevant, the document has nothing to do with the query.
1 = partially relevant, the document is relevant to the query but partly answers it.
2 = highly relevant, the document is dedicated to the query and contains the exact answer.

Extraction Guidelines
1. Extract the content from the [document to be evaluated] that is strictly relevant to the query and can help answer the query. This may include paragraphs, sentences, or even individual phrases.
2. The extracted content must come directly from the original document, with all punctuation preserved.

Your response must strictly follow the format:
<think> [the reasoning content] </think>
<extract> [fragment/none] </extract>
<score> [0/1/2] </score>

Input
[document to be evaluated]: {doc}";

pub const UMBRELA_SYSTEM: &str =
    "You are a relevance assessor working on a user-generated content platform.";

pub const UMBRELA_USER_TEMPLATE: &str = "Given a query and a document, you must provide a score on an integer scale of 0 to 2 with the following meanings:
0 = represent that the document has nothing to do with the query
1 = represents that the document has some answer for the query, but the answer may be a bit unclear, or hidden amongst extraneous information
2 = represents that the document is dedicated to the query and contains the exact answer

Important Instruction:
Assign category 1 if document presents something very important related to the entire topic but also has some extra information and category 2 if the document only and entirely refers to the topic. If none of the above satisfies give it category 0.
Please determine the primary intent behind a user's search query, using both your internal knowledge and the provided context.

Your response must strictly follow the format:
<think> [the reasoning content] </think>
<score> [0/1/2] </score>

Input
[query]: {query}
[document to be evaluated]: {doc}";

const ROUND1_FORMAT_FULL: &str =
    "<think> [the reasoning content] </think>\n<intent> [inferred user intent] </intent>";
const ROUND1_FORMAT_NO_INTENT: &str = "<think> [the reasoning content] </think>";
const ROUND1_FORMAT_SINGLE_ROUND: &str = "<think> [the reasoning content] </think>\n<intent> [inferred user intent] </intent>\n<extract> [fragment/none] </extract>\n<score> [0/1/2] </score>";
const ROUND2_FORMAT_FULL: &str =
    "<think> [the reasoning content] </think>\n<extract> [fragment/none] </extract>\n<score> [0/1/2] </score>";
const ROUND2_FORMAT_NO_EXTRACT: &str =
    "<think> [the reasoning content] </think>\n<score> [0/1/2] </score>";

/// Marker rendered when no auxiliary documents are available.
pub const EMPTY_DOCS_MARKER: &str = "(none)";

/// Join auxiliary documents as numbered bullets on fresh lines; empty input
/// renders the literal empty marker.
pub fn format_docs(aux_docs: &[String]) -> String {
    if aux_docs.is_empty() {
        return EMPTY_DOCS_MARKER.to_string();
    }
    let mut out = String::new();
    for (i, doc) in aux_docs.iter().enumerate() {
        out.push('\n');
        out.push_str(&format!("{}. {}", i + 1, doc));
    }
    out
}

/// Render the round-1 conversation (system + user) for `variant`.
pub fn render_round1_prompt_variant(
    query: &str,
    aux_docs: &[String],
    variant: Variant,
) -> Vec<Message> {
    let mut user = ROUND1_USER_TEMPLATE
        .replace("{query}", query)
        .replace("{docs}", &format_docs(aux_docs));
    match variant {
        Variant::Full | Variant::NoExtract => {}
        Variant::NoIntent => {
            user = user.replace(ROUND1_FORMAT_FULL, ROUND1_FORMAT_NO_INTENT);
        }
        Variant::SingleRound => {
            user = user.replace(ROUND1_FORMAT_FULL, ROUND1_FORMAT_SINGLE_ROUND);
        }
    }
    vec![Message::system(ROUND1_SYSTEM), Message::user(user)]
}

/// Render the full-variant round-1 conversation.
pub fn render_round1_prompt(query: &str, aux_docs: &[String]) -> Vec<Message> {
    render_round1_prompt_variant(query, aux_docs, Variant::Full)
}

/// Extend a round-1 conversation (its messages plus the assistant reply)
/// with the round-2 user message for `candidate`. The candidate document is
/// substituted verbatim, with no escaping.
pub fn render_round2_messages_variant(
    prior: &[Message],
    candidate: &str,
    variant: Variant,
) -> Vec<Message> {
    let mut user = ROUND2_USER_TEMPLATE.replace("{doc}", candidate);
    if variant == Variant::NoExtract {
        user = user.replace(ROUND2_FORMAT_FULL, ROUND2_FORMAT_NO_EXTRACT);
    }
    let mut messages = prior.to_vec();
    messages.push(Message::user(user));
    messages
}

/// Extend a full-variant conversation with the round-2 user message.
pub fn render_round2_messages(prior: &[Message], candidate: &str) -> Vec<Message> {
    render_round2_messages_variant(prior, candidate, Variant::Full)
}

/// Render the single-round ablation prompt: intent inference, extraction,
/// and scoring collapsed into one user message carrying both inputs.
pub fn render_single_round_prompt(
    query: &str,
    aux_docs: &[String],
    candidate: &str,
) -> Vec<Message> {
    let round1 = ROUND1_USER_TEMPLATE
        .replace("{query}", query)
        .replace("{docs}", &format_docs(aux_docs))
        .replace(ROUND1_FORMAT_FULL, ROUND1_FORMAT_SINGLE_ROUND);
    let round2_tail = ROUND2_USER_TEMPLATE.replace("{doc}", candidate).replace(
        &format!("Your response must strictly follow the format:\n{ROUND2_FORMAT_FULL}\n\n"),
        "",
    );
    let user = format!("{round1}\n\n{round2_tail}");
    vec![Message::system(ROUND1_SYSTEM), Message::user(user)]
}

/// Render the single-prompt annotation conversation used for cold-start
/// record export.
pub fn render_umbrela_prompt(query: &str, candidate: &str) -> Vec<Message> {
    let user = UMBRELA_USER_TEMPLATE
        .replace("{query}", query)
        .replace("{doc}", candidate);
    vec![Message::system(UMBRELA_SYSTEM), Message::user(user)]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round1_substitutes_query_and_docs() {
        let messages = render_round1_prompt("ski", &["doc A".to_string()]);
        assert_eq!(messages.len(), 2);
        assert_eq!(messages[0].content, ROUND1_SYSTEM);
        let user = &messages[1].content;
        assert!(user.contains("[query]: ski"));
        assert!(user.contains("[in-platform documents]: \n1. doc A"));
    }

    #[test]
    fn round1_empty_docs_renders_marker() {
        let messages = render_round1_prompt("ski", &[]);
        assert!(messages[1]
            .content
            .contains("[in-platform documents]: (none)"));
    }

    #[test]
    fn docs_are_numbered_bullets() {
        let docs = vec!["first".to_string(), "second".to_string()];
        assert_eq!(format_docs(&docs), "\n1. first\n2. second");
    }

    #[test]
    fn round2_appends_one_user_message() {
        let prior = {
            let mut m = render_round1_prompt("q", &[]);
            m.push(crate::policy::Message::assistant(
                "<think>a</think><intent>b</intent>",
            ));
            m
        };
        let messages = render_round2_messages(&prior, "the candidate");
        assert_eq!(messages.len(), 4);
        let user = &messages[3].content;
        assert!(user.contains("[document to be evaluated]: the candidate"));
        assert!(user.contains("0 = not relevant"));
    }

    #[test]
    fn candidate_with_tag_text_passes_through_verbatim() {
        let messages = render_round2_messages(&[], "contains </extract> inside");
        assert!(messages[0].content.contains("contains </extract> inside"));
    }

    #[test]
    fn umbrela_prompt_substitutes_both_sites() {
        let messages = render_umbrela_prompt("q1", "d1");
        assert_eq!(messages[0].content, UMBRELA_SYSTEM);
        assert!(messages[1].content.contains("[query]: q1"));
        assert!(messages[1]
            .content
            .contains("[document to be evaluated]: d1"));
        assert!(messages[1].content.contains("integer scale of 0 to 2"));
    }

    #[test]
    fn no_intent_variant_drops_intent_format_line() {
        let messages = render_round1_prompt_variant("q", &[], Variant::NoIntent);
        let user = &messages[1].content;
        assert!(!user.contains("<intent>"));
        assert!(user.contains("<think>"));
    }

    #[test]
    fn no_extract_variant_drops_extract_format_line() {
        let messages = render_round2_messages_variant(&[], "doc", Variant::NoExtract);
        let user = &messages[0].content;
        assert!(!user.contains("<extract>"));
        assert!(user.contains("<score>"));
    }

    #[test]
    fn single_round_prompt_carries_both_inputs_and_all_tags() {
        let messages = render_single_round_prompt("q", &["aux".into()], "cand");
        assert_eq!(messages.len(), 2);
        let user = &messages[1].content;
        assert!(user.contains("[query]: q"));
        assert!(user.contains("1. aux"));
        assert!(user.contains("[document to be evaluated]: cand"));
        assert!(user.contains("<intent>"));
        assert!(user.contains("<extract>"));
        // Only one format block.
        assert_eq!(
            user.matches("Your response must strictly follow the format:")
                .count(),
            1
        );
    }
}
